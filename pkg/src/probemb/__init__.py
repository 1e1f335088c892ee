"""Probabilistic adapters for frozen vision-language embeddings."""

__version__ = "0.1.0"
