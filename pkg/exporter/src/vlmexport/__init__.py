"""Frozen-encoder embedding exporter for the PVLMEMB1 pipeline."""

__version__ = "0.1.0"
