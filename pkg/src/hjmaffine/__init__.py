"""Affine finite-dimensional realizations of HJM forward-rate models."""

__version__ = "0.1.0"
