"""Dual-granularity contrastive pretraining on synthetic event videos."""

__version__ = "0.1.0"
