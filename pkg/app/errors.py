from __future__ import annotations


class ConfigurationError(ValueError):
    """Raised when a run description, grid or geometry is unusable as given."""


class PhysicsError(RuntimeError):
    """Raised when a physically well-formed request cannot be computed."""
