"""Constructive reconstruction of a potential from partial Dirichlet-to-Neumann data."""

__version__ = "0.1.0"
