"""Branching random walks on the lattice with a single branching source."""

__version__ = "0.1.0"
