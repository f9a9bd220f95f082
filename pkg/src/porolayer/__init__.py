"""Homogenized poroelastic plates: cell problems, effective tensors and solvers."""

__version__ = "0.1.0"
