"""Numerical toolkit for equilibrium partitions of Riemannian 3-manifolds."""

__version__ = "0.1.0"
