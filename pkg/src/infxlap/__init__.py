"""Numerical tools for the infinity-Laplace equation with a variable exponent."""

__version__ = "0.1.0"
