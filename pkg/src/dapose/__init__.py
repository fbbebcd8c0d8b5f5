"""Deficiency-aware multi-view 3D pose fusion toolkit."""

__version__ = "0.1.0"
