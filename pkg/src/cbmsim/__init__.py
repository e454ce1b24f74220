"""Exact-arithmetic simulator for networks of bioelectric cells."""

__version__ = "0.1.0"
