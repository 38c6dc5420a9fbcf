"""Adaptive target detection in Gaussian backgrounds with nonzero mean."""

__version__ = "0.1.0"
