"""Infeasibility detection for fixed-point iterations of nonexpansive operators."""

__version__ = "0.1.0"
