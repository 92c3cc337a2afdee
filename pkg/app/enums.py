from __future__ import annotations

from enum import Enum


class Boundary(str, Enum):
    absorbing = "absorbing"
    periodic = "periodic"
    perfect_conductor = "perfect-conductor"


class SourceKind(str, Enum):
    plane_wave = "plane-wave"
    aperture = "aperture"


class SolverMethod(str, Enum):
    direct = "direct"
    iterative = "iterative"
    trivial = "trivial"


class Engine(str, Enum):
    full = "full"
    tube = "tube"


class ShapeKind(str, Enum):
    ellipsoid = "ellipsoid"
    box = "box"


class CellStatus(str, Enum):
    ok = "ok"
    failed = "failed"


class MapScale(str, Enum):
    linear = "linear"
    db = "db"
