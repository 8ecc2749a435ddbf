"""Discrete stochastic maximal regularity laboratory."""

__version__ = "0.1.0"
