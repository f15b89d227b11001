"""Algebraic multigrid with energy-minimized prolongation."""

__version__ = "0.1.0"
