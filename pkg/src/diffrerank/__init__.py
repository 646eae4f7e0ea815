"""Confidence-gated diffusion re-ranking for discriminative classifiers."""

__version__ = "0.1.0"
