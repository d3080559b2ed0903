"""Stochastic network protection with inverse-optimized travel costs."""

__version__ = "0.1.0"
