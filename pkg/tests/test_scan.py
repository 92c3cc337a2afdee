from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate

from app.enums import Boundary, CellStatus, Engine
from app.errors import ConfigurationError, PhysicsError
from app.services import scan
from app.services.grid import GeometryError, GridSpec
from app.services.media import C0, BiIsotropicMaterial, wave_constants
from app.services.phantom import Box, Ellipsoid, PhantomParams, Scene, SceneShape, build_head_scene
from app.services.scan import (
    CellResult,
    FullWaveEngine,
    ScanAbortedError,
    ScanConfig,
    TubeEngine,
    chiral_support,
    run_scan,
    tube_estimate,
)

F = 2.45e9
K0 = 2.0 * math.pi * F / C0
MINI = PhantomParams.mini()
MINI_SCAN = ScanConfig(cells=(6, 6), pitch=0.010, aperture=(0.008, 0.008))


def _mini_spec(cell_size: float = 0.002) -> GridSpec:
    return GridSpec.for_domain(MINI.domain_size, cell_size, absorber_cells=8)


def _mini_map(scene: Scene | None = None, **kwargs) -> scan.ScanMap:
    return run_scan(scene or build_head_scene(MINI), MINI_SCAN, _mini_spec(), **kwargs)


def test_achiral_phantom_gives_an_empty_tube_map() -> None:
    scan_map = _mini_map(build_head_scene(replace(MINI, inclusion_kappa=0.0)))
    assert scan_map.engine is Engine.tube
    assert np.all(scan_map.values == 0)
    assert np.all(scan_map.power_db() == -80.0)


def test_mini_tube_map_peaks_over_the_inclusion() -> None:
    scan_map = _mini_map()
    assert scan_map.argmax_cell() == (3, 3)
    assert scan_map.x_centers[3] == pytest.approx(0.005)
    assert scan_map.contrast_db((3, 3), (0, 0)) >= 10.0
    assert scan_map.failures == 0
    assert np.array_equal(scan_map.power > 0, chiral_support(build_head_scene(MINI), MINI_SCAN))


def test_tube_map_is_even_in_kappa() -> None:
    scene = build_head_scene(MINI)
    forward = _mini_map(scene)
    backward = _mini_map(scene.scaled_chirality(-1.0))
    assert np.array_equal(forward.power, backward.power)


def test_tube_power_grows_with_chirality() -> None:
    scene = build_head_scene(MINI)
    powers = [_mini_map(scene.scaled_chirality(factor)).power[3, 3] for factor in (0.25, 0.5, 1.0)]
    assert powers[0] < powers[1] < powers[2]


def test_map_does_not_depend_on_job_count() -> None:
    serial = _mini_map(jobs=1)
    parallel = _mini_map(jobs=4)
    assert np.array_equal(serial.values, parallel.values)
    assert [(d.col, d.row) for d in serial.diagnostics] == [(d.col, d.row) for d in parallel.diagnostics]


def _sphere_scene(material: BiIsotropicMaterial) -> Scene:
    sphere = SceneShape(Ellipsoid((0.0, 0.0, 0.0), (0.030, 0.030, 0.030)), material)
    return Scene(BiIsotropicMaterial(eps_r=10.0), (sphere,), MINI.domain_size, F)


def _single_ray_engine(scene: Scene) -> TubeEngine:
    cfg = ScanConfig(cells=(1, 1), pitch=0.010, aperture=(0.002, 0.002), tube_rays=1)
    return TubeEngine(scene, cfg, _mini_spec(0.001))


def test_central_ray_through_a_sixty_millimetre_chord() -> None:
    engine = _single_ray_engine(_sphere_scene(BiIsotropicMaterial(eps_r=10.0, kappa=0.5)))
    rotation, attenuation = engine.ray_integrals(np.array([0.0]), np.array([0.0]))
    assert rotation[0] == pytest.approx(0.5 * K0 * 0.060, rel=1e-9)
    assert attenuation[0] == 0.0
    assert math.sin(rotation[0]) ** 2 == pytest.approx(0.999, abs=2e-3)
    assert engine.power(0, 0) == pytest.approx(math.sin(rotation[0]) ** 2, rel=1e-12)


def test_attenuation_matches_quadrature() -> None:
    tissue = BiIsotropicMaterial(eps_r=10.0, sigma=0.2)
    engine = _single_ray_engine(_sphere_scene(tissue))
    _, attenuation = engine.ray_integrals(np.array([0.0]), np.array([0.0]))
    rate = wave_constants(tissue, F).attenuation
    radius = 0.030

    def along(y: float) -> float:
        return rate if abs(y) <= radius else 0.0

    expected, _ = integrate.quad(along, engine.y_low, engine.y_high, points=[-radius, radius])
    assert attenuation[0] == pytest.approx(expected, rel=0.05)
    assert engine.power(0, 0) == 0.0


def test_tube_estimate_matches_engine() -> None:
    scene = build_head_scene(MINI)
    spec = _mini_spec()
    assert tube_estimate(scene, MINI_SCAN, (3, 3), spec) == TubeEngine(scene, MINI_SCAN, spec).power(3, 3)


def test_full_size_phantom_support() -> None:
    params = replace(PhantomParams(), inclusion_offset=(0.010, 0.0, 0.010))
    scene = build_head_scene(params)
    cfg = ScanConfig()
    support = chiral_support(scene, cfg)
    assert sorted(zip(*np.nonzero(support))) == [(5, 6), (6, 6), (7, 6)]
    scan_map = run_scan(scene, cfg, GridSpec.for_domain(params.domain_size, 0.002))
    assert scan_map.values.shape == (12, 12)
    assert np.array_equal(scan_map.power > 0, support)


def test_support_of_a_box_inclusion() -> None:
    target = SceneShape(Box((0.001, -0.01, 0.001), (0.008, 0.02, 0.008)), BiIsotropicMaterial(eps_r=10.0, kappa=0.5))
    scene = Scene(BiIsotropicMaterial(eps_r=10.0), (target,), MINI.domain_size, F)
    support = chiral_support(scene, MINI_SCAN)
    assert sorted(zip(*np.nonzero(support))) == [(3, 3)]


@pytest.mark.parametrize(
    "kwargs",
    [
        {"tx_polarization": (0.0, 0.0, 1.0), "rx_polarization": (1.0, 0.0, 1.0)},
        {"tx_polarization": (0.0, 1.0, 0.0), "rx_polarization": (1.0, 0.0, 0.0)},
        {"cells": (0, 3)},
        {"pitch": 0.0},
        {"aperture": (0.01, -0.01)},
        {"tube_rays": 0},
    ],
)
def test_scan_config_validation(kwargs: dict) -> None:
    with pytest.raises(ConfigurationError):
        ScanConfig(**kwargs)


def test_scan_config_normalizes_polarizations() -> None:
    cfg = ScanConfig(tx_polarization=(0.0, 0.0, 2.0), rx_polarization=(3.0, 0.0, 0.0), engine="full")
    assert cfg.tx_polarization == (0.0, 0.0, 1.0)
    assert cfg.rx_polarization == (1.0, 0.0, 0.0)
    assert cfg.engine is Engine.full
    assert cfg.x_centers[0] == pytest.approx(-0.110)
    assert cfg.planes((0.28, 0.26, 0.28)) == pytest.approx((-0.125, 0.125))


def test_scan_extent_must_fit_the_domain() -> None:
    with pytest.raises(GeometryError):
        ScanConfig().check_extent(MINI.domain_size)
    with pytest.raises(GeometryError):
        replace(MINI_SCAN, standoff=0.05).check_extent(MINI.domain_size)
    MINI_SCAN.check_extent(MINI.domain_size)


class _FlakyEngine:
    tag = Engine.tube

    def __init__(self, failing: set[tuple[int, int]]) -> None:
        self.failing = failing

    def evaluate(self, col: int, row: int) -> CellResult:
        if (col, row) in self.failing:
            raise PhysicsError(f"cell {col},{row} did not converge")
        return CellResult(value=complex(col + row))


def test_scan_keeps_going_below_the_abort_fraction(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setattr(scan, "build_engine", lambda *args, **kwargs: _FlakyEngine({(1, 1)}))
    cfg = ScanConfig(cells=(4, 2), pitch=0.010, aperture=(0.008, 0.008))
    scan_map = run_scan(build_head_scene(MINI), cfg, _mini_spec())
    assert scan_map.failures == 1
    assert np.isnan(scan_map.values[1, 1])
    assert scan_map.argmax_cell() == (3, 1)
    failed = [d for d in scan_map.diagnostics if d.status is CellStatus.failed]
    assert failed[0].message == "cell 1,1 did not converge"


def test_scan_aborts_at_a_quarter_of_failed_cells(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setattr(scan, "build_engine", lambda *args, **kwargs: _FlakyEngine({(0, 0), (2, 1)}))
    cfg = ScanConfig(cells=(4, 2), pitch=0.010, aperture=(0.008, 0.008))
    with pytest.raises(ScanAbortedError) as caught:
        run_scan(build_head_scene(MINI), cfg, _mini_spec())
    assert len(caught.value.diagnostics) == 8


# a small full-wave cavity: periodic across x and z, conducting walls along y
CAVITY = (0.016, 0.024, 0.016)
CAVITY_SCAN = ScanConfig(cells=(1, 1), pitch=0.010, aperture=(0.006, 0.006), standoff=0.003, engine=Engine.full)


def _cavity_scene(kappa: float) -> tuple[Scene, GridSpec]:
    host = BiIsotropicMaterial(eps_r=4.0, sigma=0.05)
    target = SceneShape(Box((-0.004, -0.004, -0.004), (0.008, 0.008, 0.008)), replace(host, kappa=kappa))
    spec = GridSpec.for_domain(CAVITY, 0.002, (Boundary.periodic, Boundary.perfect_conductor, Boundary.periodic))
    return Scene(host, (target,), CAVITY, F), spec


def test_full_wave_engine_on_a_small_cavity() -> None:
    scene, spec = _cavity_scene(0.5)
    scan_map = run_scan(scene, CAVITY_SCAN, spec)
    assert scan_map.engine is Engine.full
    assert scan_map.power[0, 0] > 1e-6
    diagnostic = scan_map.diagnostics[0]
    assert diagnostic.status is CellStatus.ok
    assert diagnostic.residual < 1e-6
    assert diagnostic.iterations == 2

    engine = FullWaveEngine(scene, CAVITY_SCAN, spec)
    scene_field, reference_field = engine.cell_fields(0, 0)
    assert engine.calibrate(0, 0, scene_field, reference_field).value == pytest.approx(scan_map.values[0, 0])

    achiral, _ = _cavity_scene(0.0)
    assert run_scan(achiral, CAVITY_SCAN, spec).power[0, 0] < 1e-12


@pytest.mark.slow
def test_full_wave_and_tube_agree_on_the_mini_phantom() -> None:
    scene = build_head_scene(MINI)
    spec = GridSpec.for_domain(MINI.domain_size, 0.08 / 24, absorber_cells=8)
    full = run_scan(scene, replace(MINI_SCAN, engine=Engine.full), spec)
    tube = run_scan(scene, MINI_SCAN, spec)
    assert full.argmax_cell() == tube.argmax_cell() == (3, 3)
    assert full.contrast_db((3, 3), (0, 0)) >= 10.0
    tube_db, full_db = tube.power_db(), full.power_db()
    visible = tube_db > -40.0
    assert visible.any()
    assert np.all(np.abs(full_db[visible] - tube_db[visible]) <= 3.0)
