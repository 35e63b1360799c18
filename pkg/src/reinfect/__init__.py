"""Stochastic epidemic model with random infectivity and gradual loss of immunity."""

__version__ = "0.1.0"
