"""Discrete r-capacity and first-passage percolation upper-tail toolkit."""
__version__ = "0.1.0"
