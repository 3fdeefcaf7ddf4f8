"""Robust optimization-based iterative learning control via forward-backward splitting."""

__version__ = "0.1.0"
