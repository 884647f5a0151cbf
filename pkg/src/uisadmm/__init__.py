"""Inexact stochastic ADMM for linearly constrained nonconvex composite problems."""

__version__ = "0.1.0"
