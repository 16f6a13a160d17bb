"""Coupled lattice dynamics, exact bound formulas and Monte Carlo checks of concentration estimates."""

__version__ = "0.1.0"
