"""Finite-volume numerics for disordered topological insulators."""

__version__ = "0.1.0"
