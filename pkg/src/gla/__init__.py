"""Coordinate calculus on generalized Lie algebroids."""

__version__ = "0.1.0"
