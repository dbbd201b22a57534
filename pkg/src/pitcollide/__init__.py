"""Collision-aware vehicle dynamics: impact forces, physics-informed dynamics networks, and uncertainty propagation."""

__version__ = "0.1.0"
