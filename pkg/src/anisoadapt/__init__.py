"""Anisotropic metric-driven adaptive P1 finite elements for variational problems."""

__version__ = "0.1.0"
