"""Brownian motion on the half-line with piecewise power-law singular drift."""

__version__ = "0.1.0"
