"""Numerical laboratory for damped and controlled wave maps from the circle
into spheres."""

__version__ = "0.1.0"
