"""Streaming temporal-graph training with history-based pseudo-supervision."""

__version__ = "0.1.0"
