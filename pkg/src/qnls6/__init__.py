"""Numerical toolkit for the energy-critical quadratic Schrodinger system on R^6."""

__version__ = "0.1.0"
