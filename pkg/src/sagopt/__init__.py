"""Accelerated gradient schemes as discretisations of their limit ODE."""

__version__ = "0.1.0"
