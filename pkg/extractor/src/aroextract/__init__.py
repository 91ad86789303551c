"""Embedding extraction adapter: model in, AROE files out."""

__version__ = "0.1.0"
