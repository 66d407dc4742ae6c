"""Reporting, evaluation metrics, the cost model, and the CLI."""
