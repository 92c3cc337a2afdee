"""Uniform Cartesian grid geometry shared by voxelization and the field solver."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from app.config import settings
from app.enums import Boundary
from app.errors import ConfigurationError
from app.services.media import BiIsotropicMaterial, shortest_wavelength

Vector3 = tuple[float, float, float]


class GeometryError(ConfigurationError):
    pass


class ResolutionError(ConfigurationError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Interior cell counts plus boundary treatment per axis.

    Absorbing axes are padded with ``absorber_cells`` extra cells on both sides, outside the
    interior. The interior is centred on the origin.
    """

    cell_size: float
    extents: tuple[int, int, int]
    boundaries: tuple[Boundary, Boundary, Boundary] = (Boundary.absorbing,) * 3
    absorber_cells: int = field(default_factory=lambda: settings.absorber_cells)

    def __post_init__(self) -> None:
        object.__setattr__(self, "extents", tuple(int(n) for n in self.extents))
        object.__setattr__(self, "boundaries", tuple(Boundary(b) for b in self.boundaries))
        if not math.isfinite(self.cell_size) or self.cell_size <= 0:
            raise ConfigurationError(f"cell_size must be positive, got {self.cell_size!r}")
        if len(self.extents) != 3 or any(n < 1 for n in self.extents):
            raise ConfigurationError(f"extents must be three positive cell counts, got {self.extents}")
        if len(self.boundaries) != 3:
            raise ConfigurationError("one boundary per axis is required")
        if Boundary.absorbing in self.boundaries and self.absorber_cells < 8:
            raise ConfigurationError(f"absorbing layers need at least 8 cells, got {self.absorber_cells}")

    @classmethod
    def for_domain(
        cls,
        domain_size: Sequence[float],
        cell_size: float,
        boundaries: Sequence[Boundary] = (Boundary.absorbing,) * 3,
        absorber_cells: int | None = None,
    ) -> "GridSpec":
        extents = []
        for length in domain_size:
            count = round(length / cell_size)
            if count < 1 or abs(count * cell_size - length) > 1e-6 * cell_size:
                raise GeometryError(
                    f"domain length {length:.6g} m is not a whole number of {cell_size:.6g} m cells"
                )
            extents.append(count)
        return cls(
            cell_size=cell_size,
            extents=tuple(extents),
            boundaries=tuple(boundaries),
            absorber_cells=settings.absorber_cells if absorber_cells is None else absorber_cells,
        )

    @property
    def padding(self) -> tuple[int, int, int]:
        return tuple(self.absorber_cells if b is Boundary.absorbing else 0 for b in self.boundaries)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(n + 2 * p for n, p in zip(self.extents, self.padding))

    @property
    def unknowns(self) -> int:
        nx, ny, nz = self.shape
        return 3 * nx * ny * nz

    @property
    def domain_size(self) -> Vector3:
        return tuple(n * self.cell_size for n in self.extents)

    @property
    def origin(self) -> Vector3:
        """Lower corner of the padded grid."""
        return tuple(-0.5 * n * self.cell_size - p * self.cell_size for n, p in zip(self.extents, self.padding))

    def positions(self, axis: int, half: bool = False) -> np.ndarray:
        """Cell-centre (integer) or upper-face (half) coordinates along ``axis``."""
        offset = 1.0 if half else 0.5
        return self.origin[axis] + (np.arange(self.shape[axis]) + offset) * self.cell_size

    def interior_slice(self, axis: int) -> slice:
        pad = self.padding[axis]
        return slice(pad, pad + self.extents[axis])

    def plane_index(self, axis: int, position: float) -> int:
        """Index of the cell-centre plane nearest ``position``; raises when off the grid."""
        index = int(round((position - self.origin[axis]) / self.cell_size - 0.5))
        if not 0 <= index < self.shape[axis]:
            raise GeometryError(f"plane at {position:.6g} m lies outside the grid along axis {axis}")
        return index


@dataclass
class MaterialGrid:
    """Per-cell material indices into a compact, first-appearance-ordered table."""

    index: np.ndarray
    materials: tuple[BiIsotropicMaterial, ...]
    spec: GridSpec

    def __post_init__(self) -> None:
        if self.index.shape != self.spec.shape:
            raise GeometryError(f"index array {self.index.shape} does not match grid {self.spec.shape}")

    def parameter(self, name: str) -> np.ndarray:
        table = np.array([getattr(material, name) for material in self.materials], dtype=float)
        return table[self.index]

    def lookup(self, values: Sequence[complex]) -> np.ndarray:
        return np.asarray(values)[self.index]

    def interior(self) -> np.ndarray:
        return self.index[tuple(self.spec.interior_slice(axis) for axis in range(3))]

    def cell_count(self, material: BiIsotropicMaterial, interior_only: bool = True) -> int:
        if material not in self.materials:
            return 0
        cells = self.interior() if interior_only else self.index
        return int(np.count_nonzero(cells == self.materials.index(material)))

    def volume(self, material: BiIsotropicMaterial) -> float:
        return self.cell_count(material) * self.spec.cell_size**3

    @property
    def has_coupling(self) -> bool:
        return any(not material.is_achiral for material in self.materials)


def check_resolution(spec: GridSpec, materials: Iterable[BiIsotropicMaterial], frequency: float) -> float:
    """Return cells per shortest wavelength; warn below the soft limit, raise below the hard one."""
    wavelength = shortest_wavelength(materials, frequency)
    cells = wavelength / spec.cell_size
    if cells < settings.min_cells_per_wavelength:
        raise ResolutionError(
            f"cell size {spec.cell_size * 1e3:.3f} mm resolves the shortest wavelength "
            f"({wavelength * 1e3:.2f} mm) with only {cells:.1f} cells; at least "
            f"{settings.min_cells_per_wavelength:g} are required"
        )
    if cells < settings.warn_cells_per_wavelength:
        logging.warning(
            "Cell size %.3f mm gives %.1f cells per shortest wavelength (%.2f mm); %g recommended",
            spec.cell_size * 1e3,
            cells,
            wavelength * 1e3,
            settings.warn_cells_per_wavelength,
        )
    return cells
