"""Offline image-embedding extraction at three blur levels."""

__version__ = "0.1.0"
