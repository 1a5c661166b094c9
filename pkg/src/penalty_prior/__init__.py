"""Penalty-to-prior derivation, divergences, penalty planning and pruning."""
