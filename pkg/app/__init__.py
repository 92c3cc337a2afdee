"""Bi-isotropic wave solver and cross-polarization imaging simulator."""
from __future__ import annotations

__version__ = "0.1.0"
