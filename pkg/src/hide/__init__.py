"""Desk-scale learned image compression with dictionary-based entropy modeling."""

__version__ = "0.1.0"
