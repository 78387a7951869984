"""Numerical laboratory for the open KPZ / stochastic Burgers invariance identities."""

__version__ = "0.1.0"
