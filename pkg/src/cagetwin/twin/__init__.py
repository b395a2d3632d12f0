"""Deployable twin: ingestion, training, bundles, prediction, evaluation and the CLI."""
