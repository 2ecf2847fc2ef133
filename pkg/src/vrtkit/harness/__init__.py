"""Batch tooling: sequence I/O, degradations, metrics, smoke training, CLI."""
