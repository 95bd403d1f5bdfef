"""Numerical laboratory for degenerate elliptic operators on complements of
low-dimensional boundary sets."""

__version__ = "0.1.0"
