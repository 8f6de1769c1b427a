"""Greedy ranking-and-selection procedures, bounds, benchmark problems and experiment tools."""

__version__ = "0.1.0"
