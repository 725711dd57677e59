"""Pair-approximation SIRS epidemics on regular networks."""
__version__ = "0.1.0"
