"""Pseudo-spectral phase-field simulation and bulk-potential discovery."""

__version__ = "0.1.0"
