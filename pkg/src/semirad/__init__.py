"""Semiclassical radiation from single-particle quantum currents."""

__version__ = "0.1.0"
