"""Compound screening on high-content images of neuronal cultures."""

__version__ = "0.1.0"
