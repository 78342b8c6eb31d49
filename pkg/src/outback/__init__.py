"""Decoupled minimal-perfect-hash KV index."""

__version__ = "0.1.0"
