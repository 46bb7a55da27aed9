"""Broken FEEC solvers on 2D mapped multipatch spline domains."""

__version__ = "0.1.0"
