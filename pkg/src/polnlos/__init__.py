"""Polarization-enhanced non-line-of-sight imaging: transport simulation and recovery."""

__version__ = "0.1.0"


class DegenerateGeometryError(ValueError):
    """Raised when a geometric construction has no well-defined direction."""


class ConfigError(ValueError):
    """Invalid configuration document or violated domain invariant."""
