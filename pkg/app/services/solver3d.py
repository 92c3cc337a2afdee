"""Frequency-domain finite-difference solver for bi-isotropic media on a staggered grid.

Unknowns are the electric fields on cell edges, stacked component-major (Ex, Ey, Ez) and
flattened in C order. Along each axis a field sits either on cell centres ("int") or on the
upper cell faces ("half", see :meth:`GridSpec.positions`)::

    Ex (half, int, int)   Ey (int, half, int)   Ez (int, int, half)
    Hx (int, half, half)  Hy (half, int, half)  Hz (half, half, int)

Absorbing and perfect-conductor axes terminate on the outer faces of the padded grid: the
face-normal edge field on the upper wall is pinned to zero so both walls are treated alike.
"""
from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from app.config import settings
from app.enums import Boundary, SolverMethod, SourceKind
from app.errors import ConfigurationError, PhysicsError
from app.services.grid import GeometryError, GridSpec, MaterialGrid, ResolutionError, check_resolution
from app.services.media import (
    MU0,
    DegenerateMaterialError,
    InvalidMaterialError,
    shortest_wavelength,
    wave_constants,
)
from app.services.slab1d import JonesMatrix, LayerStack

__all__ = [
    "ApertureSpec",
    "AssemblyError",
    "CapacityError",
    "ColumnResult",
    "ConvergenceError",
    "FieldDump",
    "FieldSolution",
    "GeometryError",
    "GridSpec",
    "HelmholtzOperator",
    "ResolutionError",
    "SourceSpec",
    "aperture_profile",
    "assemble",
    "assemble_standard",
    "column_scattering",
    "memory_estimate",
    "port_overlap",
    "read_field_dump",
    "solve",
    "source_vector",
    "write_field_dump",
]

_DUMP_MAGIC = "CHIRALFIELD 1"
_TRANSVERSE = {0: (1, 2), 1: (0, 2), 2: (0, 1)}


class AssemblyError(PhysicsError):
    pass


class CapacityError(PhysicsError):
    pass


class ConvergenceError(PhysicsError):
    def __init__(self, message: str, history: Sequence[float]) -> None:
        super().__init__(message)
        self.history = list(history)


@dataclass(frozen=True)
class ApertureSpec:
    """Rectangular window on a grid plane normal to ``axis`` with a uniform tangential profile.

    ``center`` and ``size`` are given along the two transverse axes in increasing axis order.
    ``size=None`` covers the whole plane.
    """

    axis: int
    position: float
    polarization: tuple[float, float, float]
    center: tuple[float, float] = (0.0, 0.0)
    size: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.axis not in (0, 1, 2):
            raise ConfigurationError(f"axis must be 0, 1 or 2, got {self.axis!r}")
        polarization = np.asarray(self.polarization, dtype=float)
        if polarization.shape != (3,) or not np.all(np.isfinite(polarization)):
            raise ConfigurationError(f"polarization must be a real 3-vector, got {self.polarization!r}")
        if abs(np.linalg.norm(polarization) - 1.0) > 1e-9:
            raise ConfigurationError(f"polarization must be a unit vector, got {self.polarization!r}")
        if abs(polarization[self.axis]) > 1e-12:
            raise ConfigurationError("polarization must be orthogonal to the propagation axis")
        object.__setattr__(self, "polarization", tuple(float(p) for p in polarization))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.size is not None:
            size = tuple(float(s) for s in self.size)
            if len(size) != 2 or any(not math.isfinite(s) or s <= 0 for s in size):
                raise ConfigurationError(f"aperture size must be two positive lengths, got {self.size!r}")
            object.__setattr__(self, "size", size)

    @property
    def transverse_axes(self) -> tuple[int, int]:
        return _TRANSVERSE[self.axis]


@dataclass(frozen=True)
class SourceSpec:
    kind: SourceKind
    aperture: ApertureSpec
    amplitude: complex = 1.0

    def __post_init__(self) -> None:
        if self.kind is SourceKind.aperture and self.aperture.size is None:
            raise ConfigurationError("an aperture source needs a size")
        if self.kind is SourceKind.plane_wave and self.aperture.size is not None:
            raise ConfigurationError("a plane-wave source covers the whole plane; size must be None")

    @classmethod
    def plane_wave(
        cls, axis: int, position: float, polarization: Sequence[float], amplitude: complex = 1.0
    ) -> "SourceSpec":
        return cls(SourceKind.plane_wave, ApertureSpec(axis, position, tuple(polarization)), amplitude)

    @classmethod
    def from_aperture(cls, aperture: ApertureSpec, amplitude: complex = 1.0) -> "SourceSpec":
        return cls(SourceKind.aperture, aperture, amplitude)


@dataclass(frozen=True)
class _Stencil:
    curl_e: sp.csr_matrix
    curl_h: sp.csr_matrix
    face_to_edge: sp.csr_matrix
    edge_to_face: sp.csr_matrix


@dataclass
class HelmholtzOperator:
    matrix: sp.csr_matrix
    grid: MaterialGrid
    frequency: float
    curl_e: sp.csr_matrix
    edge_to_face: sp.csr_matrix
    inv_mu_face: np.ndarray
    zeta_edge: np.ndarray
    active: np.ndarray
    direct_threshold: int = field(default_factory=lambda: settings.direct_threshold)
    _factorization: object | None = field(default=None, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def spec(self) -> GridSpec:
        return self.grid.spec

    @property
    def unknowns(self) -> int:
        return self.matrix.shape[0]

    @property
    def omega(self) -> float:
        return 2.0 * math.pi * self.frequency

    @property
    def method(self) -> SolverMethod:
        return SolverMethod.direct if self.unknowns <= self.direct_threshold else SolverMethod.iterative

    def __matmul__(self, vector: np.ndarray) -> np.ndarray:
        return self.matrix @ vector

    def factorize(self) -> None:
        with self._lock:
            if self._factorization is None:
                logging.debug("Factorizing %d unknowns", self.unknowns)
                self._factorization = spla.splu(self.matrix.tocsc())

    def direct_solve(self, rhs: np.ndarray) -> np.ndarray:
        self.factorize()
        with self._lock:
            return self._factorization.solve(rhs)


@dataclass
class FieldSolution:
    e: np.ndarray
    residual: float
    iterations: int
    method: SolverMethod
    spec: GridSpec
    operator: HelmholtzOperator | None = field(default=None, repr=False)
    history: list[float] = field(default_factory=list)

    def magnetic_field(self) -> np.ndarray:
        """H on cell faces from ``curl E = -j*omega*(zeta*E + mu*H)``."""
        if self.operator is None:
            raise ConfigurationError("magnetic field recovery needs the operator the field was solved with")
        op = self.operator
        flat = self.e.ravel()
        curl = op.curl_e @ flat
        coupled = op.edge_to_face @ (op.zeta_edge * flat)
        h = op.inv_mu_face * ((1j / op.omega) * curl - coupled) / MU0
        return h.reshape(self.e.shape)


@dataclass(frozen=True)
class FieldDump:
    e: np.ndarray
    cell_size: float
    origin: tuple[float, float, float]


@dataclass(frozen=True)
class ColumnResult:
    transmission: JonesMatrix
    reflection: JonesMatrix
    transmitted_power: float
    reflected_power: float
    cell_size: float
    slab_cells: int
    residual: float


# ---------------------------------------------------------------------------
# stencils


def _shift(n: int, periodic: bool) -> sp.csr_matrix:
    shift = sp.eye(n, k=1, format="lil", dtype=float)
    if periodic:
        shift[n - 1, 0] = shift[n - 1, 0] + 1.0
    return shift.tocsr()


def _axis_stencil(n: int, h: float, periodic: bool) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Forward difference and forward average from centres to upper faces."""
    up = _shift(n, periodic)
    eye = sp.identity(n, format="csr", dtype=float)
    forward = (up - eye) / h
    average = 0.5 * (up + eye)
    if not periodic:
        keep = sp.diags(np.r_[np.ones(n - 1), 0.0])
        forward = keep @ forward
        average = keep @ average
    return forward.tocsr(), average.tocsr()


def _embed(matrix: sp.spmatrix, axis: int, shape: tuple[int, int, int]) -> sp.csr_matrix:
    factors = [sp.identity(n, format="csr") for n in shape]
    factors[axis] = matrix
    return sp.kron(sp.kron(factors[0], factors[1]), factors[2], format="csr")


def _stretch(spec: GridSpec, axis: int, half: bool, k_ref: float) -> np.ndarray:
    positions = spec.positions(axis, half=half)
    if spec.boundaries[axis] is not Boundary.absorbing:
        return np.ones(positions.size, dtype=complex)
    thickness = spec.absorber_cells * spec.cell_size
    lower = spec.origin[axis] + thickness
    upper = lower + spec.extents[axis] * spec.cell_size
    depth = np.clip(np.maximum(lower - positions, positions - upper) / thickness, 0.0, 1.0)
    order = settings.absorber_order
    peak = (order + 1) * -math.log(settings.absorber_reflection) / (2.0 * k_ref * thickness)
    return 1.0 - 1j * peak * depth**order


def _build_stencil(spec: GridSpec, k_ref: float) -> _Stencil:
    shape = spec.shape
    diff_f, diff_b, avg_f, avg_b = [], [], [], []
    for axis in range(3):
        periodic = spec.boundaries[axis] is Boundary.periodic
        forward, average = _axis_stencil(shape[axis], spec.cell_size, periodic)
        backward = -forward.T
        s_half = _stretch(spec, axis, True, k_ref)
        s_int = _stretch(spec, axis, False, k_ref)
        diff_f.append(_embed(sp.diags(1.0 / s_half) @ forward, axis, shape))
        diff_b.append(_embed(sp.diags(1.0 / s_int) @ backward, axis, shape))
        avg_f.append(_embed(average, axis, shape))
        avg_b.append(_embed(average.T, axis, shape))
    dxf, dyf, dzf = diff_f
    dxb, dyb, dzb = diff_b
    curl_e = sp.bmat([[None, -dzf, dyf], [dzf, None, -dxf], [-dyf, dxf, None]], format="csr")
    curl_h = sp.bmat([[None, -dzb, dyb], [dzb, None, -dxb], [-dyb, dxb, None]], format="csr")
    axf, ayf, azf = avg_f
    axb, ayb, azb = avg_b
    face_to_edge = sp.block_diag([axf @ ayb @ azb, axb @ ayf @ azb, axb @ ayb @ azf], format="csr")
    return _Stencil(curl_e, curl_h, face_to_edge, face_to_edge.T.tocsr())


# ---------------------------------------------------------------------------
# material sampling


def _neighbour(values: np.ndarray, axis: int, periodic: bool) -> np.ndarray:
    if periodic:
        return np.roll(values, -1, axis=axis)
    n = values.shape[axis]
    return np.take(values, np.minimum(np.arange(n) + 1, n - 1), axis=axis)


def _edge_samples(values: np.ndarray, spec: GridSpec) -> np.ndarray:
    parts = []
    for component in range(3):
        periodic = spec.boundaries[component] is Boundary.periodic
        parts.append(0.5 * (values + _neighbour(values, component, periodic)))
    return np.concatenate([part.ravel() for part in parts])


def _face_samples(values: np.ndarray, spec: GridSpec) -> np.ndarray:
    parts = []
    for component in range(3):
        sampled = values
        for axis in _TRANSVERSE[component]:
            periodic = spec.boundaries[axis] is Boundary.periodic
            sampled = 0.5 * (sampled + _neighbour(sampled, axis, periodic))
        parts.append(sampled.ravel())
    return np.concatenate(parts)


def _active_edges(spec: GridSpec) -> np.ndarray:
    parts = []
    for component in range(3):
        active = np.ones(spec.shape, dtype=bool)
        if spec.boundaries[component] is not Boundary.periodic:
            selector = [slice(None)] * 3
            selector[component] = spec.shape[component] - 1
            active[tuple(selector)] = False
        parts.append(active.ravel())
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# assembly


def memory_estimate(unknowns: int, nonzeros: int, method: SolverMethod) -> int:
    """Rough peak bytes for a solve: factor fill for direct, Krylov work vectors otherwise."""
    if method is SolverMethod.direct:
        return int(16 * 40 * unknowns ** (4.0 / 3.0))
    return int(16 * (nonzeros + 10 * unknowns))


def _check_capacity(spec: GridSpec, coupled: bool, direct_threshold: int, memory_cap: int) -> None:
    unknowns = spec.unknowns
    method = SolverMethod.direct if unknowns <= direct_threshold else SolverMethod.iterative
    nonzeros = (41 if coupled else 13) * unknowns
    needed = memory_estimate(unknowns, nonzeros, method)
    if needed > memory_cap:
        raise CapacityError(
            f"{method.value} solve of {unknowns} unknowns needs about {needed / 1024**3:.1f} GiB, "
            f"above the {memory_cap / 1024**3:.1f} GiB cap"
        )


def _material_arrays(grid: MaterialGrid, frequency: float) -> dict[str, np.ndarray]:
    try:
        constants = [wave_constants(material, frequency) for material in grid.materials]
    except (DegenerateMaterialError, InvalidMaterialError) as exc:
        raise AssemblyError(f"cannot assemble operator: {exc}") from exc
    return {
        "eps": grid.lookup([material.permittivity(frequency) for material in grid.materials]),
        "mu_r": grid.lookup([material.mu_r for material in grid.materials]).astype(float),
        "xi": grid.lookup([c.xi for c in constants]),
        "zeta": grid.lookup([c.zeta for c in constants]),
        "k_ref": np.array(constants[grid.index[0, 0, 0]].mean_wavenumber.real),
    }


def _pin_walls(matrix: sp.spmatrix, active: np.ndarray) -> sp.csr_matrix:
    keep = sp.diags(active.astype(float))
    pinned = sp.diags((~active).astype(float))
    return (keep @ matrix @ keep + pinned).tocsr()


def _assemble(
    grid: MaterialGrid,
    frequency: float,
    spec: GridSpec | None,
    coupled: bool,
    direct_threshold: int | None,
    memory_cap: int | None,
) -> HelmholtzOperator:
    if spec is not None and spec != grid.spec:
        raise GeometryError("material grid was voxelized on a different grid specification")
    spec = grid.spec
    if frequency <= 0:
        raise ConfigurationError(f"frequency must be positive, got {frequency!r}")
    threshold = settings.direct_threshold if direct_threshold is None else direct_threshold
    coupled = coupled and grid.has_coupling
    arrays = _material_arrays(grid, frequency)
    check_resolution(spec, grid.materials, frequency)
    _check_capacity(spec, coupled, threshold, settings.memory_cap_bytes if memory_cap is None else memory_cap)

    omega = 2.0 * math.pi * frequency
    stencil = _build_stencil(spec, float(arrays["k_ref"]))
    eps_edge = _edge_samples(arrays["eps"], spec)
    inv_mu_face = 1.0 / _face_samples(arrays["mu_r"], spec)
    inv_mu = sp.diags(inv_mu_face)

    matrix = -(stencil.curl_h @ inv_mu @ stencil.curl_e) + omega**2 * MU0 * sp.diags(eps_edge)
    zeta_edge = np.zeros(spec.unknowns, dtype=complex)
    if coupled:
        xi_edge = _edge_samples(arrays["xi"], spec)
        zeta_edge = _edge_samples(arrays["zeta"], spec)
        xi_diag = sp.diags(xi_edge)
        zeta_diag = sp.diags(zeta_edge)
        averaged = stencil.face_to_edge @ inv_mu
        matrix = (
            matrix
            + 1j * omega * (xi_diag @ averaged @ stencil.curl_e - stencil.curl_h @ inv_mu @ stencil.edge_to_face @ zeta_diag)
            - omega**2 * (xi_diag @ averaged @ stencil.edge_to_face @ zeta_diag)
        )

    active = _active_edges(spec)
    logging.debug("Assembled %d unknowns (%s coupling)", spec.unknowns, "with" if coupled else "no")
    return HelmholtzOperator(
        matrix=_pin_walls(matrix, active),
        grid=grid,
        frequency=frequency,
        curl_e=stencil.curl_e,
        edge_to_face=stencil.edge_to_face,
        inv_mu_face=inv_mu_face,
        zeta_edge=zeta_edge,
        active=active,
        direct_threshold=threshold,
    )


def assemble(
    grid: MaterialGrid,
    frequency: float,
    spec: GridSpec | None = None,
    *,
    direct_threshold: int | None = None,
    memory_cap: int | None = None,
) -> HelmholtzOperator:
    """Sparse operator ``A`` with ``A E = j*omega*mu0*J`` for the bi-isotropic wave equation.

    Without any magnetoelectric coupling in the grid the result is exactly
    :func:`assemble_standard`.
    """
    return _assemble(grid, frequency, spec, True, direct_threshold, memory_cap)


def assemble_standard(
    grid: MaterialGrid,
    frequency: float,
    spec: GridSpec | None = None,
    *,
    direct_threshold: int | None = None,
    memory_cap: int | None = None,
) -> HelmholtzOperator:
    """Plain curl-curl Helmholtz operator; chirality and Tellegen terms are ignored."""
    return _assemble(grid, frequency, spec, False, direct_threshold, memory_cap)


# ---------------------------------------------------------------------------
# sources and ports


def _aperture_mask(spec: GridSpec, aperture: ApertureSpec, component: int) -> np.ndarray:
    plane = spec.plane_index(aperture.axis, aperture.position)
    u, v = aperture.transverse_axes
    pu = spec.positions(u, half=u == component)
    pv = spec.positions(v, half=v == component)
    if aperture.size is None:
        select_u = np.ones(pu.size, dtype=bool)
        select_v = np.ones(pv.size, dtype=bool)
    else:
        for axis, centre, width in ((u, aperture.center[0], aperture.size[0]), (v, aperture.center[1], aperture.size[1])):
            lo = spec.origin[axis]
            hi = lo + spec.shape[axis] * spec.cell_size
            if centre - width / 2 < lo or centre + width / 2 > hi:
                raise GeometryError(f"aperture extends outside the grid along axis {axis}")
        tol = 1e-9 * spec.cell_size
        select_u = np.abs(pu - aperture.center[0]) <= aperture.size[0] / 2 + tol
        select_v = np.abs(pv - aperture.center[1]) <= aperture.size[1] / 2 + tol
    mask = np.zeros(spec.shape, dtype=bool)
    selector: list[object] = [slice(None)] * 3
    selector[aperture.axis] = plane
    mask[tuple(selector)] = np.outer(select_u, select_v)
    return mask


def _components(aperture: ApertureSpec) -> list[tuple[int, float]]:
    return [(c, p) for c, p in enumerate(aperture.polarization) if c != aperture.axis and p != 0]


def aperture_profile(spec: GridSpec, aperture: ApertureSpec) -> np.ndarray:
    """Unit-amplitude tangential field of ``aperture`` as a (3, nx, ny, nz) array."""
    profile = np.zeros((3, *spec.shape), dtype=complex)
    for component, weight in _components(aperture):
        profile[component][_aperture_mask(spec, aperture, component)] = weight
    return profile


def source_vector(op: HelmholtzOperator, source: SourceSpec) -> np.ndarray:
    """Right-hand side of a current sheet launching ``amplitude`` V/m into the local medium."""
    spec = op.spec
    aperture = source.aperture
    rhs = np.zeros((3, *spec.shape), dtype=complex)
    if source.amplitude == 0:
        return rhs.ravel()
    cell = [spec.plane_index(axis, 0.0) for axis in range(3)]
    cell[aperture.axis] = spec.plane_index(aperture.axis, aperture.position)
    u, v = aperture.transverse_axes
    if aperture.size is not None:
        cell[u] = spec.plane_index(u, aperture.center[0])
        cell[v] = spec.plane_index(v, aperture.center[1])
    host = op.grid.materials[op.grid.index[tuple(cell)]]
    eta = wave_constants(host, op.frequency).eta
    sheet_current = -2.0 * source.amplitude / eta
    density = 1j * op.omega * MU0 * sheet_current / spec.cell_size
    for component, weight in _components(aperture):
        mask = _aperture_mask(spec, aperture, component)
        if not mask.any():
            raise GeometryError("source aperture does not cover any grid point")
        rhs[component][mask] = density * weight
    return rhs.ravel() * op.active


def port_overlap(solution: FieldSolution, aperture: ApertureSpec) -> complex:
    """Projection of the tangential field onto the aperture polarization, averaged over the window."""
    total = 0j
    for component, weight in _components(aperture):
        mask = _aperture_mask(solution.spec, aperture, component)
        if not mask.any():
            raise GeometryError("aperture does not cover any grid point")
        total += weight * solution.e[component][mask].mean()
    return complex(total)


# ---------------------------------------------------------------------------
# solving


def solve_rhs(
    op: HelmholtzOperator, rhs: np.ndarray, tol: float | None = None, max_iterations: int | None = None
) -> FieldSolution:
    tol = settings.solver_tolerance if tol is None else tol
    if not 1e-10 <= tol <= 1e-3:
        raise ConfigurationError(f"solver tolerance must lie in [1e-10, 1e-3], got {tol!r}")
    spec = op.spec
    norm_b = float(np.linalg.norm(rhs))
    if norm_b == 0:
        return FieldSolution(
            e=np.zeros((3, *spec.shape), dtype=complex),
            residual=0.0,
            iterations=0,
            method=SolverMethod.trivial,
            spec=spec,
            operator=op,
        )

    history: list[float] = []
    if op.method is SolverMethod.direct:
        x = op.direct_solve(rhs)
        iterations = 1
    else:
        diagonal = op.matrix.diagonal()
        inverse = np.where(diagonal != 0, 1.0 / np.where(diagonal != 0, diagonal, 1.0), 1.0)
        preconditioner = spla.LinearOperator(op.matrix.shape, matvec=lambda v: inverse * v, dtype=complex)

        def record(xk: np.ndarray) -> None:
            history.append(float(np.linalg.norm(op.matrix @ xk - rhs)) / norm_b)

        x, info = spla.bicgstab(
            op.matrix,
            rhs,
            rtol=0.5 * tol,
            atol=0.0,
            maxiter=max_iterations or settings.max_iterations,
            M=preconditioner,
            callback=record,
        )
        iterations = len(history)
        if info != 0:
            logging.warning("Krylov solve stopped after %d iterations (info=%d)", iterations, info)
            raise ConvergenceError(
                f"BiCGSTAB did not reach relative residual {tol:g} after {iterations} iterations", history
            )

    residual = float(np.linalg.norm(op.matrix @ x - rhs)) / norm_b
    history.append(residual)
    if residual > tol:
        raise ConvergenceError(f"relative residual {residual:.3e} exceeds tolerance {tol:g}", history)
    logging.debug("%s solve: %d unknowns, residual %.2e", op.method.value, op.unknowns, residual)
    return FieldSolution(
        e=x.reshape(3, *spec.shape),
        residual=residual,
        iterations=iterations,
        method=op.method,
        spec=spec,
        operator=op,
        history=history,
    )


def solve(
    op: HelmholtzOperator, source: SourceSpec, tol: float | None = None, max_iterations: int | None = None
) -> FieldSolution:
    return solve_rhs(op, source_vector(op, source), tol, max_iterations)


# ---------------------------------------------------------------------------
# field dumps


def write_field_dump(path: Path, solution: FieldSolution) -> Path:
    spec = solution.spec
    nx, ny, nz = spec.shape
    header = "\n".join(
        [
            _DUMP_MAGIC,
            f"shape 3 {nx} {ny} {nz}",
            f"cell_size {spec.cell_size!r}",
            "origin " + " ".join(repr(float(o)) for o in spec.origin),
            "components Ex Ey Ez",
            "layout complex128 little-endian C-order component-major",
            "end",
        ]
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        handle.write((header + "\n").encode("ascii"))
        handle.write(np.ascontiguousarray(solution.e, dtype="<c16").tobytes())
    return path


def read_field_dump(path: Path) -> FieldDump:
    raw = Path(path).read_bytes()
    marker = b"\nend\n"
    cut = raw.find(marker)
    if not raw.startswith(_DUMP_MAGIC.encode("ascii")) or cut < 0:
        raise ConfigurationError(f"{path} is not a field dump")
    fields: dict[str, list[str]] = {}
    for line in raw[:cut].decode("ascii").splitlines()[1:]:
        key, *values = line.split()
        fields[key] = values
    shape = tuple(int(n) for n in fields["shape"])
    payload = np.frombuffer(raw[cut + len(marker) :], dtype="<c16")
    if payload.size != int(np.prod(shape)):
        raise ConfigurationError(f"{path} holds {payload.size} values, header announces {shape}")
    return FieldDump(
        e=payload.reshape(shape).astype(complex),
        cell_size=float(fields["cell_size"][0]),
        origin=tuple(float(o) for o in fields["origin"]),
    )


# ---------------------------------------------------------------------------
# periodic column


def column_scattering(
    stack: LayerStack,
    cells_per_wavelength: int | None = None,
    tol: float | None = None,
    absorber_cells: int | None = None,
) -> ColumnResult:
    """Full-wave normal-incidence Jones matrices of ``stack`` in a laterally periodic column.

    The column is one cell wide and periodic in x and y, absorbing along z. A plane-wave
    sheet launches each linear polarization; the same run without layers calibrates the
    incident field, and the calibrated ratios are referred back to the slab faces with the
    numerical wavenumber of the embedding.
    """
    if stack.embedding_in != stack.embedding_out:
        raise ConfigurationError("the periodic column needs the same medium on both sides")
    if not stack.layers:
        raise ConfigurationError("the periodic column needs at least one layer")
    embedding = stack.embedding_in
    frequency = stack.frequency
    per_wavelength = cells_per_wavelength or settings.cells_per_wavelength
    wavelength = shortest_wavelength([embedding, *(layer.material for layer in stack.layers)], frequency)
    target = wavelength / per_wavelength
    if len(stack.layers) == 1:
        counts = [max(1, math.ceil(stack.layers[0].thickness / target - 1e-9))]
        cell_size = stack.layers[0].thickness / counts[0]
    else:
        cell_size = target
        counts = [max(1, round(layer.thickness / cell_size)) for layer in stack.layers]
        for layer, count in zip(stack.layers, counts):
            if abs(count * cell_size - layer.thickness) > 1e-9 * layer.thickness:
                logging.info(
                    "Layer of %.4f mm rounded to %d cells (%.4f mm)",
                    layer.thickness * 1e3,
                    count,
                    count * cell_size * 1e3,
                )

    gap = max(4, per_wavelength // 4)
    reflection_probe, source_cell = 1, 4
    slab_start = 6 + gap
    slab_cells = sum(counts)
    transmission_probe = slab_start + slab_cells + gap
    length = transmission_probe + 1 + gap
    spec = GridSpec(
        cell_size=cell_size,
        extents=(1, 1, length),
        boundaries=(Boundary.periodic, Boundary.periodic, Boundary.absorbing),
        absorber_cells=settings.absorber_cells if absorber_cells is None else absorber_cells,
    )
    pad = spec.padding[2]

    table = [embedding]
    index = np.zeros(spec.shape, dtype=np.int32)
    cursor = pad + slab_start
    for layer, count in zip(stack.layers, counts):
        if layer.material not in table:
            table.append(layer.material)
        index[:, :, cursor : cursor + count] = table.index(layer.material)
        cursor += count
    scene_grid = MaterialGrid(index=index, materials=tuple(table), spec=spec)
    reference_grid = MaterialGrid(index=np.zeros(spec.shape, dtype=np.int32), materials=(embedding,), spec=spec)
    scene_op = assemble(scene_grid, frequency)
    reference_op = assemble(reference_grid, frequency)

    z = spec.positions(2)
    kr, ks, kt = pad + reflection_probe, pad + source_cell, pad + transmission_probe
    transmission = np.zeros((2, 2), dtype=complex)
    reflection = np.zeros((2, 2), dtype=complex)
    residual = 0.0
    step = None
    for column, polarization in enumerate(((1.0, 0.0, 0.0), (0.0, 1.0, 0.0))):
        source = SourceSpec.plane_wave(2, float(z[ks]), polarization)
        field_scene = solve(scene_op, source, tol)
        field_reference = solve(reference_op, source, tol)
        residual = max(residual, field_scene.residual, field_reference.residual)
        incident_t = field_reference.e[column, 0, 0, kt]
        incident_r = field_reference.e[column, 0, 0, kr]
        if step is None:
            step = field_reference.e[column, 0, 0, kt + 1] / incident_t
        for row in range(2):
            transmission[row, column] = field_scene.e[row, 0, 0, kt] / incident_t
            scattered = field_scene.e[row, 0, 0, kr] - field_reference.e[row, 0, 0, kr]
            reflection[row, column] = scattered / incident_r

    # step = exp(-j k h) of the discrete embedding wave
    transmission *= step**slab_cells
    reflection *= step ** (-(2 * slab_start - 2 * source_cell - 1))
    return ColumnResult(
        transmission=JonesMatrix.from_array(transmission),
        reflection=JonesMatrix.from_array(reflection),
        transmitted_power=float(abs(transmission[0, 0]) ** 2 + abs(transmission[1, 0]) ** 2),
        reflected_power=float(abs(reflection[0, 0]) ** 2 + abs(reflection[1, 0]) ** 2),
        cell_size=cell_size,
        slab_cells=slab_cells,
        residual=residual,
    )
