"""Viscoelastic flow with integral memory on a two-time deformation field."""
__version__ = "0.1.0"
