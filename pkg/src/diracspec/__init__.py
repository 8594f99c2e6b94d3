"""Spectral analysis of 1D Dirac operators with summable potentials."""
__version__ = "0.1.0"
