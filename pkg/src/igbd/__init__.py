"""Inexact generalized Benders decomposition with learned tolerance control."""

__version__ = "0.1.0"
