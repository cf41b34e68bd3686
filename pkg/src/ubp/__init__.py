"""Blur-prior contrastive training and zero-shot brain-to-image retrieval."""

__version__ = "0.1.0"
