"""Cross-polarized aperture sweep over the x-z plane with propagation along +y."""
from __future__ import annotations

import asyncio
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from app.config import settings
from app.enums import CellStatus, Engine, SolverMethod
from app.errors import ConfigurationError, PhysicsError
from app.services.grid import GeometryError, GridSpec, Vector3
from app.services.media import wave_constants
from app.services.phantom import Box, Ellipsoid, Scene, voxelize
from app.services.solver3d import ApertureSpec, FieldSolution, SourceSpec, assemble, port_overlap, solve

PROPAGATION_AXIS = 1
SCAN_AXES = (0, 2)


class ScanAbortedError(RuntimeError):
    def __init__(self, message: str, diagnostics: Sequence["CellDiagnostic"]) -> None:
        super().__init__(message)
        self.diagnostics = list(diagnostics)


def _unit(vector: Sequence[float], name: str) -> Vector3:
    array = np.asarray(vector, dtype=float)
    norm = float(np.linalg.norm(array))
    if array.shape != (3,) or not np.all(np.isfinite(array)) or norm == 0:
        raise ConfigurationError(f"{name} must be a non-zero real 3-vector, got {vector!r}")
    return tuple(float(v) for v in array / norm)


@dataclass(frozen=True)
class ScanConfig:
    cells: tuple[int, int] = (12, 12)
    pitch: float = 0.020
    tx_polarization: Vector3 = (0.0, 0.0, 1.0)
    rx_polarization: Vector3 = (1.0, 0.0, 0.0)
    aperture: tuple[float, float] = (0.014752, 0.009752)
    standoff: float = 0.005
    engine: Engine = Engine.tube
    tube_rays: int = field(default_factory=lambda: settings.tube_rays)

    def __post_init__(self) -> None:
        tx = _unit(self.tx_polarization, "tx_polarization")
        rx = _unit(self.rx_polarization, "rx_polarization")
        if abs(np.dot(tx, rx)) > 1e-9:
            raise ConfigurationError("tx and rx polarizations must be orthogonal")
        if abs(tx[PROPAGATION_AXIS]) > 1e-12 or abs(rx[PROPAGATION_AXIS]) > 1e-12:
            raise ConfigurationError("polarizations must be transverse to the y propagation axis")
        if len(self.cells) != 2 or min(self.cells) < 1:
            raise ConfigurationError(f"cells must be two positive counts, got {self.cells!r}")
        if self.pitch <= 0 or self.standoff < 0 or min(self.aperture) <= 0:
            raise ConfigurationError("pitch and aperture must be positive and standoff non-negative")
        if self.tube_rays < 1:
            raise ConfigurationError(f"tube_rays must be at least 1, got {self.tube_rays}")
        object.__setattr__(self, "tx_polarization", tx)
        object.__setattr__(self, "rx_polarization", rx)
        object.__setattr__(self, "engine", Engine(self.engine))

    @property
    def x_centers(self) -> np.ndarray:
        n = self.cells[0]
        return (np.arange(n) - (n - 1) / 2) * self.pitch

    @property
    def z_centers(self) -> np.ndarray:
        n = self.cells[1]
        return (np.arange(n) - (n - 1) / 2) * self.pitch

    def planes(self, domain_size: Vector3) -> tuple[float, float]:
        half = 0.5 * domain_size[PROPAGATION_AXIS]
        return -half + self.standoff, half - self.standoff

    def footprint(self, col: int, row: int) -> tuple[np.ndarray, np.ndarray]:
        centre = np.array([self.x_centers[col], self.z_centers[row]])
        half = 0.5 * np.asarray(self.aperture)
        return centre - half, centre + half

    def check_extent(self, domain_size: Vector3) -> None:
        for axis, centres, width in ((0, self.x_centers, self.aperture[0]), (2, self.z_centers, self.aperture[1])):
            reach = np.max(np.abs(centres)) + width / 2
            if reach > 0.5 * domain_size[axis] + 1e-12:
                raise GeometryError(f"scan extent {reach * 1e3:.1f} mm exceeds the domain along axis {axis}")
        low, high = self.planes(domain_size)
        if low >= high:
            raise GeometryError("standoff leaves no room between the transmitter and receiver planes")


@dataclass(frozen=True)
class CellDiagnostic:
    col: int
    row: int
    status: CellStatus
    residual: float | None = None
    iterations: int | None = None
    seconds: float = 0.0
    message: str = ""


@dataclass
class ScanMap:
    values: np.ndarray
    x_centers: np.ndarray
    z_centers: np.ndarray
    engine: Engine
    diagnostics: list[CellDiagnostic] = field(default_factory=list)

    @property
    def power(self) -> np.ndarray:
        return np.abs(self.values) ** 2

    def power_db(self, floor: float | None = None) -> np.ndarray:
        floor = settings.db_floor if floor is None else floor
        power = self.power
        with np.errstate(divide="ignore", invalid="ignore"):
            db = 10.0 * np.log10(power)
        db = np.where(np.isnan(power), np.nan, np.maximum(np.nan_to_num(db, neginf=floor), floor))
        return db

    def argmax_cell(self) -> tuple[int, int]:
        col, row = np.unravel_index(int(np.nanargmax(self.power)), self.power.shape)
        return int(col), int(row)

    def contrast_db(self, bright: tuple[int, int], dark: tuple[int, int], floor: float | None = None) -> float:
        db = self.power_db(floor)
        return float(db[bright] - db[dark])

    @property
    def failures(self) -> int:
        return sum(1 for item in self.diagnostics if item.status is CellStatus.failed)


@dataclass(frozen=True)
class CellResult:
    value: complex
    residual: float | None = None
    iterations: int | None = None


class CellEngine(Protocol):
    tag: Engine

    def evaluate(self, col: int, row: int) -> CellResult: ...


class TubeEngine:
    """Ray-bundle estimate of the cross-polarized power inside each cell's tube."""

    tag = Engine.tube

    def __init__(self, scene: Scene, cfg: ScanConfig, spec: GridSpec) -> None:
        self.scene = scene
        self.cfg = cfg
        grid = voxelize(scene, spec)
        self.cells = grid.interior()
        self.cell_size = spec.cell_size
        self.corner = -0.5 * np.asarray(spec.domain_size)
        constants = [wave_constants(material, scene.frequency) for material in grid.materials]
        self.rotation_rate = np.array([c.alpha_tilde for c in constants])
        self.attenuation_rate = np.array([c.attenuation for c in constants])
        self.y_low, self.y_high = cfg.planes(scene.domain_size)
        edges = self.corner[1] + np.arange(self.cells.shape[1] + 1) * spec.cell_size
        self.path_lengths = np.clip(
            np.minimum(edges[1:], self.y_high) - np.maximum(edges[:-1], self.y_low), 0.0, None
        )
        background = wave_constants(scene.background, scene.frequency)
        self.reference_power = math.exp(-2.0 * background.attenuation * (self.y_high - self.y_low))

    def ray_positions(self, col: int, row: int) -> tuple[np.ndarray, np.ndarray]:
        n = self.cfg.tube_rays
        lo, hi = self.cfg.footprint(col, row)
        fractions = (np.arange(n) + 0.5) / n
        xs = lo[0] + fractions * (hi[0] - lo[0])
        zs = lo[1] + fractions * (hi[1] - lo[1])
        xx, zz = np.meshgrid(xs, zs, indexing="ij")
        return xx.ravel(), zz.ravel()

    def ray_integrals(self, x: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Accumulated rotation (rad) and field attenuation (Np) along +y rays at (x, z)."""
        nx, _, nz = self.cells.shape
        ix = np.clip(np.floor((np.asarray(x) - self.corner[0]) / self.cell_size).astype(int), 0, nx - 1)
        iz = np.clip(np.floor((np.asarray(z) - self.corner[2]) / self.cell_size).astype(int), 0, nz - 1)
        materials = self.cells[ix, :, iz]
        rotation = (self.rotation_rate[materials] * self.path_lengths).sum(axis=-1)
        attenuation = (self.attenuation_rate[materials] * self.path_lengths).sum(axis=-1)
        return rotation, attenuation

    def power(self, col: int, row: int) -> float:
        rotation, attenuation = self.ray_integrals(*self.ray_positions(col, row))
        cross = np.mean(np.sin(rotation) ** 2 * np.exp(-2.0 * attenuation))
        return float(cross / self.reference_power)

    def evaluate(self, col: int, row: int) -> CellResult:
        return CellResult(value=complex(math.sqrt(self.power(col, row))))


class FullWaveEngine:
    """Fresh aperture-to-aperture solve per cell, calibrated by the empty matching medium."""

    tag = Engine.full

    def __init__(
        self,
        scene: Scene,
        cfg: ScanConfig,
        spec: GridSpec,
        *,
        tol: float | None = None,
        direct_threshold: int | None = None,
        max_iterations: int | None = None,
        supersample: int = 1,
    ) -> None:
        self.cfg = cfg
        self.tol = tol
        self.max_iterations = max_iterations
        self.y_low, self.y_high = cfg.planes(scene.domain_size)
        self.scene_op = assemble(voxelize(scene, spec, supersample), scene.frequency, direct_threshold=direct_threshold)
        self.reference_op = assemble(
            voxelize(scene.empty_reference(), spec), scene.frequency, direct_threshold=direct_threshold
        )
        logging.info(
            "Full-wave scan: %d unknowns per solve, %s path", self.scene_op.unknowns, self.scene_op.method.value
        )
        if self.scene_op.method is SolverMethod.direct:
            self.scene_op.factorize()
            self.reference_op.factorize()

    def apertures(self, col: int, row: int) -> tuple[ApertureSpec, ApertureSpec, ApertureSpec]:
        centre = (float(self.cfg.x_centers[col]), float(self.cfg.z_centers[row]))
        size = tuple(self.cfg.aperture)
        tx = ApertureSpec(PROPAGATION_AXIS, self.y_low, self.cfg.tx_polarization, centre, size)
        rx = ApertureSpec(PROPAGATION_AXIS, self.y_high, self.cfg.rx_polarization, centre, size)
        co = ApertureSpec(PROPAGATION_AXIS, self.y_high, self.cfg.tx_polarization, centre, size)
        return tx, rx, co

    def cell_fields(self, col: int, row: int) -> tuple[FieldSolution, FieldSolution]:
        """Scene and empty-reference solutions for the transmitter of one cell."""
        source = SourceSpec.from_aperture(self.apertures(col, row)[0])
        scene_field = solve(self.scene_op, source, self.tol, self.max_iterations)
        reference_field = solve(self.reference_op, source, self.tol, self.max_iterations)
        return scene_field, reference_field

    def calibrate(self, col: int, row: int, scene_field: FieldSolution, reference_field: FieldSolution) -> CellResult:
        _, rx, co = self.apertures(col, row)
        incident = port_overlap(reference_field, co)
        if incident == 0:
            raise PhysicsError("empty reference run delivers no co-polarized field to the receiver")
        return CellResult(
            value=port_overlap(scene_field, rx) / incident,
            residual=max(scene_field.residual, reference_field.residual),
            iterations=scene_field.iterations + reference_field.iterations,
        )

    def evaluate(self, col: int, row: int) -> CellResult:
        return self.calibrate(col, row, *self.cell_fields(col, row))


def tube_estimate(scene: Scene, cfg: ScanConfig, cell: tuple[int, int], spec: GridSpec) -> float:
    """Cross-polarized power fraction of one cell under the tube approximation."""
    return TubeEngine(scene, cfg, spec).power(*cell)


def _rectangle_meets_ellipse(form: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> bool:
    if np.all(lo <= 0) and np.all(hi >= 0):
        return True
    corners = [np.array(p) for p in ((lo[0], lo[1]), (hi[0], lo[1]), (hi[0], hi[1]), (lo[0], hi[1]))]
    best = math.inf
    for start, end in zip(corners, corners[1:] + corners[:1]):
        direction = end - start
        t = np.clip(-(direction @ form @ start) / (direction @ form @ direction), 0.0, 1.0)
        point = start + t * direction
        best = min(best, float(point @ form @ point))
    return best <= 1.0


def chiral_support(scene: Scene, cfg: ScanConfig) -> np.ndarray:
    """Cells whose tube geometrically intersects a chiral shape, as an (n_cols, n_rows) mask."""
    support = np.zeros(cfg.cells, dtype=bool)
    y_low, y_high = cfg.planes(scene.domain_size)
    for item in scene.chiral_shapes:
        geometry = item.geometry
        lo3, hi3 = geometry.bounds()
        if hi3[PROPAGATION_AXIS] <= y_low or lo3[PROPAGATION_AXIS] >= y_high:
            continue
        for col in range(cfg.cells[0]):
            for row in range(cfg.cells[1]):
                lo, hi = cfg.footprint(col, row)
                if isinstance(geometry, Ellipsoid):
                    centre, form = geometry.shadow(SCAN_AXES)
                    hit = _rectangle_meets_ellipse(form, lo - centre, hi - centre)
                elif isinstance(geometry, Box):
                    box_lo, box_hi = lo3[list(SCAN_AXES)], hi3[list(SCAN_AXES)]
                    hit = bool(np.all(lo < box_hi) and np.all(hi > box_lo))
                else:
                    raise ConfigurationError(f"unsupported shape {geometry!r}")
                support[col, row] |= hit
    return support


def _evaluate_cell(engine: CellEngine, cell: tuple[int, int]) -> tuple[complex, CellDiagnostic]:
    col, row = cell
    started = time.perf_counter()
    try:
        result = engine.evaluate(col, row)
    except PhysicsError as exc:
        logging.warning("Cell (%d, %d) failed: %s", col, row, exc)
        return complex(np.nan, np.nan), CellDiagnostic(
            col, row, CellStatus.failed, seconds=time.perf_counter() - started, message=str(exc)
        )
    return result.value, CellDiagnostic(
        col,
        row,
        CellStatus.ok,
        residual=result.residual,
        iterations=result.iterations,
        seconds=time.perf_counter() - started,
    )


async def _evaluate_cells(
    engine: CellEngine, cells: list[tuple[int, int]], jobs: int
) -> list[tuple[complex, CellDiagnostic]]:
    semaphore = asyncio.Semaphore(max(1, jobs))

    async def run(cell: tuple[int, int]) -> tuple[complex, CellDiagnostic]:
        async with semaphore:
            return await asyncio.to_thread(_evaluate_cell, engine, cell)

    return list(await asyncio.gather(*(run(cell) for cell in cells)))


def build_engine(
    scene: Scene,
    cfg: ScanConfig,
    spec: GridSpec,
    *,
    tol: float | None = None,
    direct_threshold: int | None = None,
    max_iterations: int | None = None,
    supersample: int = 1,
) -> CellEngine:
    if cfg.engine is Engine.tube:
        return TubeEngine(scene, cfg, spec)
    return FullWaveEngine(
        scene,
        cfg,
        spec,
        tol=tol,
        direct_threshold=direct_threshold,
        max_iterations=max_iterations,
        supersample=supersample,
    )


def run_scan(
    scene: Scene,
    cfg: ScanConfig,
    spec: GridSpec,
    *,
    jobs: int | None = None,
    tol: float | None = None,
    direct_threshold: int | None = None,
    max_iterations: int | None = None,
    supersample: int = 1,
    abort_fraction: float | None = None,
) -> ScanMap:
    cfg.check_extent(scene.domain_size)
    started = time.perf_counter()
    engine = build_engine(
        scene,
        cfg,
        spec,
        tol=tol,
        direct_threshold=direct_threshold,
        max_iterations=max_iterations,
        supersample=supersample,
    )
    n_cols, n_rows = cfg.cells
    cells = [(col, row) for row in range(n_rows) for col in range(n_cols)]
    outcomes = asyncio.run(_evaluate_cells(engine, cells, jobs or settings.scan_jobs))

    values = np.zeros((n_cols, n_rows), dtype=complex)
    diagnostics: list[CellDiagnostic] = []
    for (col, row), (value, diagnostic) in zip(cells, outcomes):
        values[col, row] = value
        diagnostics.append(diagnostic)
    failed = sum(1 for item in diagnostics if item.status is CellStatus.failed)
    limit = settings.scan_abort_fraction if abort_fraction is None else abort_fraction
    if cells and failed / len(cells) >= limit:
        raise ScanAbortedError(f"{failed} of {len(cells)} cells failed; scan aborted", diagnostics)
    logging.info(
        "%s scan of %d cells finished in %.1f s (%d failed)",
        engine.tag.value,
        len(cells),
        time.perf_counter() - started,
        failed,
    )
    return ScanMap(
        values=values,
        x_centers=cfg.x_centers,
        z_centers=cfg.z_centers,
        engine=engine.tag,
        diagnostics=diagnostics,
    )
