"""Memory-node engine: slot array, KV log, overflow cache and resize."""
