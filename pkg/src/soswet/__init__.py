"""Exact, contour, Monte Carlo and transfer-operator tools for the 2D SOS wetting problem."""

__version__ = "0.1.0"
