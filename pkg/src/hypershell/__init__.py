"""Numerical toolkit for strain equations and rigidity of hyperbolic shells."""

__version__ = "0.1.0"
