"""Explainable top-K recommendation via dual-agent path search over KGs."""

__version__ = "0.1.0"
