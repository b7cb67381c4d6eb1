"""Numerical laboratory for Nernst-Planck-Navier-Stokes electrodiffusion."""

__version__ = "0.1.0"
