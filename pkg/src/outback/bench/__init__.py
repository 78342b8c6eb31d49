"""Workload driver and benchmark CLI."""
