"""Influence functions versus leave-one-out retraining, measured term by term."""

__version__ = "0.1.0"
