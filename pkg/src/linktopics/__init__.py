"""Crosslingual topic modeling over bags of concept links."""

__version__ = "0.1.0"
