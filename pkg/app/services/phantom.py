from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np
from scipy.spatial.transform import Rotation

from app.enums import ShapeKind
from app.errors import ConfigurationError
from app.services.grid import GeometryError, GridSpec, MaterialGrid, Vector3, check_resolution
from app.services.media import BiIsotropicMaterial

_CONTAINMENT_SAMPLES = 2048


def _vector(values: Sequence[float], name: str, positive: bool = False) -> Vector3:
    vector = tuple(float(v) for v in values)
    if len(vector) != 3 or not all(math.isfinite(v) for v in vector):
        raise ConfigurationError(f"{name} must be three finite numbers, got {values!r}")
    if positive and any(v <= 0 for v in vector):
        raise ConfigurationError(f"{name} must be positive, got {values!r}")
    return vector


def _fibonacci_sphere(count: int) -> np.ndarray:
    k = np.arange(count) + 0.5
    polar = np.arccos(1.0 - 2.0 * k / count)
    azimuth = math.pi * (1.0 + math.sqrt(5.0)) * k
    return np.stack(
        [np.sin(polar) * np.cos(azimuth), np.sin(polar) * np.sin(azimuth), np.cos(polar)], axis=-1
    )


@dataclass(frozen=True)
class Ellipsoid:
    center: Vector3
    semiaxes: Vector3
    rotation: Vector3 = (0.0, 0.0, 0.0)
    kind: ShapeKind = field(default=ShapeKind.ellipsoid, init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", _vector(self.center, "center"))
        object.__setattr__(self, "semiaxes", _vector(self.semiaxes, "semiaxes", positive=True))
        object.__setattr__(self, "rotation", _vector(self.rotation, "rotation"))

    @property
    def axes(self) -> np.ndarray:
        """Body axes as matrix columns (extrinsic x-y-z Euler angles, radians)."""
        return Rotation.from_euler("xyz", self.rotation).as_matrix()

    def _radius2(self, points: np.ndarray) -> np.ndarray:
        local = (np.asarray(points) - np.asarray(self.center)) @ self.axes
        return np.sum((local / np.asarray(self.semiaxes)) ** 2, axis=-1)

    def contains(self, points: np.ndarray) -> np.ndarray:
        return self._radius2(points) <= 1.0

    def encloses(self, points: np.ndarray) -> bool:
        return bool(np.all(self._radius2(points) <= 1.0 + 1e-9))

    def volume(self) -> float:
        a, b, c = self.semiaxes
        return 4.0 / 3.0 * math.pi * a * b * c

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        half = np.sqrt(((self.axes * np.asarray(self.semiaxes)) ** 2).sum(axis=1))
        centre = np.asarray(self.center)
        return centre - half, centre + half

    def surface_points(self) -> np.ndarray:
        unit = _fibonacci_sphere(_CONTAINMENT_SAMPLES)
        return (unit * np.asarray(self.semiaxes)) @ self.axes.T + np.asarray(self.center)

    def shadow(self, axes: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
        """Centre and quadratic form ``P`` of the projection onto ``axes``: (p-c)^T P (p-c) <= 1."""
        shape_matrix = self.axes @ np.diag(np.asarray(self.semiaxes) ** 2) @ self.axes.T
        block = shape_matrix[np.ix_(axes, axes)]
        return np.asarray(self.center)[list(axes)], np.linalg.inv(block)


@dataclass(frozen=True)
class Box:
    corner: Vector3
    size: Vector3
    kind: ShapeKind = field(default=ShapeKind.box, init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "corner", _vector(self.corner, "corner"))
        object.__setattr__(self, "size", _vector(self.size, "size", positive=True))

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points)
        lo = np.asarray(self.corner)
        hi = lo + np.asarray(self.size)
        return np.all((points >= lo) & (points < hi), axis=-1)

    def encloses(self, points: np.ndarray) -> bool:
        points = np.asarray(points)
        lo, hi = self.bounds()
        tol = 1e-9 * max(self.size)
        return bool(np.all((points >= lo - tol) & (points <= hi + tol)))

    def volume(self) -> float:
        return float(np.prod(self.size))

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.asarray(self.corner)
        return lo, lo + np.asarray(self.size)

    def surface_points(self) -> np.ndarray:
        lo, hi = self.bounds()
        return np.array([[(lo, hi)[bit][axis] for axis, bit in enumerate(bits)] for bits in itertools.product((0, 1), repeat=3)])


Shape = Union[Ellipsoid, Box]


@dataclass(frozen=True)
class SceneShape:
    geometry: Shape
    material: BiIsotropicMaterial
    name: str = ""


@dataclass(frozen=True)
class Scene:
    background: BiIsotropicMaterial
    shapes: tuple[SceneShape, ...]
    domain_size: Vector3
    frequency: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "shapes", tuple(self.shapes))
        object.__setattr__(self, "domain_size", _vector(self.domain_size, "domain_size", positive=True))
        if not math.isfinite(self.frequency) or self.frequency <= 0:
            raise ConfigurationError(f"frequency must be positive, got {self.frequency!r}")
        half = 0.5 * np.asarray(self.domain_size)
        for item in self.shapes:
            lo, hi = item.geometry.bounds()
            if np.any(lo < -half - 1e-12) or np.any(hi > half + 1e-12):
                label = item.name or item.geometry.kind.value
                raise GeometryError(f"shape {label!r} extends outside the scene domain")

    @property
    def materials(self) -> tuple[BiIsotropicMaterial, ...]:
        table: list[BiIsotropicMaterial] = [self.background]
        for item in self.shapes:
            if item.material not in table:
                table.append(item.material)
        return tuple(table)

    @property
    def chiral_shapes(self) -> tuple[SceneShape, ...]:
        return tuple(item for item in self.shapes if item.material.kappa != 0)

    def empty_reference(self) -> "Scene":
        """Matching medium only, used to calibrate measured transmissions."""
        return Scene(self.background, (), self.domain_size, self.frequency)

    def scaled_chirality(self, factor: float) -> "Scene":
        def scale(material: BiIsotropicMaterial) -> BiIsotropicMaterial:
            return replace(material, kappa=material.kappa * factor)

        shapes = tuple(replace(item, material=scale(item.material)) for item in self.shapes)
        return Scene(scale(self.background), shapes, self.domain_size, self.frequency)


@dataclass(frozen=True)
class PhantomParams:
    """Head phantom description in SI units; defaults describe the full-size head."""

    domain_size: Vector3 = (0.28, 0.26, 0.28)
    frequency: float = 2.45e9
    background_eps_r: float = 53.0
    background_sigma: float = 0.0
    head_semiaxes: Vector3 = (0.090, 0.115, 0.100)
    head_eps_r: float = 53.0
    head_sigma: float = 1.1
    inclusion_semiaxes: Vector3 = (0.020, 0.030, 0.010)
    inclusion_offset: Vector3 = (0.0, 0.0, 0.0)
    inclusion_rotation: Vector3 = (0.0, 0.0, 0.0)
    inclusion_kappa: float = 0.5
    inclusion_chi: float = 0.0
    inclusion_eps_r: float | None = None
    inclusion_sigma: float | None = None

    @classmethod
    def mini(cls) -> "PhantomParams":
        return cls(
            domain_size=(0.08, 0.08, 0.08),
            background_eps_r=10.0,
            head_semiaxes=(0.030, 0.030, 0.030),
            head_eps_r=10.0,
            head_sigma=0.2,
            inclusion_semiaxes=(0.010, 0.015, 0.005),
            inclusion_offset=(0.005, 0.0, 0.005),
        )


def build_head_scene(params: PhantomParams) -> Scene:
    background = BiIsotropicMaterial(eps_r=params.background_eps_r, sigma=params.background_sigma)
    tissue = BiIsotropicMaterial(eps_r=params.head_eps_r, sigma=params.head_sigma)
    inclusion_material = BiIsotropicMaterial(
        eps_r=params.head_eps_r if params.inclusion_eps_r is None else params.inclusion_eps_r,
        sigma=params.head_sigma if params.inclusion_sigma is None else params.inclusion_sigma,
        kappa=params.inclusion_kappa,
        chi=params.inclusion_chi,
    )
    head = Ellipsoid(center=(0.0, 0.0, 0.0), semiaxes=params.head_semiaxes)
    inclusion = Ellipsoid(
        center=params.inclusion_offset,
        semiaxes=params.inclusion_semiaxes,
        rotation=params.inclusion_rotation,
    )
    if not head.encloses(inclusion.surface_points()):
        raise GeometryError("chiral inclusion escapes the head ellipsoid")
    return Scene(
        background=background,
        shapes=(SceneShape(head, tissue, "head"), SceneShape(inclusion, inclusion_material, "inclusion")),
        domain_size=params.domain_size,
        frequency=params.frequency,
    )


def _sample_offsets(cell_size: float, supersample: int) -> list[Vector3]:
    if supersample == 1:
        return [(0.0, 0.0, 0.0)]
    quarter = 0.25 * cell_size
    return [tuple(sign * quarter for sign in signs) for signs in itertools.product((-1.0, 1.0), repeat=3)]


def voxelize(scene: Scene, spec: GridSpec, supersample: int = 1) -> MaterialGrid:
    """Assign one material per cell by centroid test or 8-point majority vote.

    Later shapes paint over earlier ones; vote ties go to the earlier table entry. Padding
    cells of absorbing axes repeat the background.
    """
    if supersample not in (1, 2):
        raise ConfigurationError(f"supersample must be 1 or 2, got {supersample}")
    for axis in range(3):
        if abs(spec.domain_size[axis] - scene.domain_size[axis]) > 1e-6 * spec.cell_size:
            raise GeometryError(
                f"grid spans {spec.domain_size[axis]:.6g} m along axis {axis}, scene needs {scene.domain_size[axis]:.6g} m"
            )
    check_resolution(spec, scene.materials, scene.frequency)

    table = scene.materials
    labels = [table.index(item.material) for item in scene.shapes]
    offsets = _sample_offsets(spec.cell_size, supersample)
    xs, ys, zs = (spec.positions(axis) for axis in range(3))
    yy, zz = np.meshgrid(ys, zs, indexing="ij")
    index = np.zeros(spec.shape, dtype=np.int32)

    for i, x in enumerate(xs):
        samples = []
        for dx, dy, dz in offsets:
            points = np.stack([np.full_like(yy, x + dx), yy + dy, zz + dz], axis=-1)
            painted = np.zeros(yy.shape, dtype=np.int32)
            for item, label in zip(scene.shapes, labels):
                painted[item.geometry.contains(points)] = label
            samples.append(painted)
        if len(samples) == 1:
            index[i] = samples[0]
        else:
            stacked = np.stack(samples)
            votes = np.stack([np.count_nonzero(stacked == label, axis=0) for label in range(len(table))])
            index[i] = np.argmax(votes, axis=0)

    for axis in range(3):
        interior = spec.interior_slice(axis)
        outside = np.ones(spec.shape[axis], dtype=bool)
        outside[interior] = False
        selector = [slice(None)] * 3
        selector[axis] = outside
        index[tuple(selector)] = 0

    used = np.unique(index)
    remap = np.zeros(len(table), dtype=np.int32)
    remap[used] = np.arange(len(used), dtype=np.int32)
    return MaterialGrid(index=remap[index], materials=tuple(table[k] for k in used), spec=spec)
