"""Interference-aware experiment splits from search query reports."""

__version__ = "0.1.0"
