"""Polar-spectral simulator for a 2D particle in a rotating potential."""

__version__ = "0.1.0"
