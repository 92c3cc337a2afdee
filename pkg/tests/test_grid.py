from __future__ import annotations

import logging

import numpy as np
import pytest

from app.enums import Boundary
from app.errors import ConfigurationError
from app.services.grid import GeometryError, GridSpec, MaterialGrid, ResolutionError, check_resolution
from app.services.media import BiIsotropicMaterial

F = 2.45e9
MATCHING = BiIsotropicMaterial(eps_r=53.0)


def test_padding_lies_outside_the_domain() -> None:
    spec = GridSpec.for_domain((0.08, 0.06, 0.04), 0.002, absorber_cells=8)
    assert spec.extents == (40, 30, 20)
    assert spec.padding == (8, 8, 8)
    assert spec.shape == (56, 46, 36)
    assert spec.unknowns == 3 * 56 * 46 * 36
    assert spec.domain_size == pytest.approx((0.08, 0.06, 0.04))
    assert spec.origin == pytest.approx((-0.056, -0.046, -0.036))


def test_periodic_axes_are_not_padded() -> None:
    spec = GridSpec(0.001, (1, 1, 30), (Boundary.periodic, Boundary.periodic, Boundary.absorbing), 10)
    assert spec.shape == (1, 1, 50)
    assert spec.interior_slice(2) == slice(10, 40)
    assert spec.interior_slice(0) == slice(0, 1)


def test_positions_and_planes() -> None:
    spec = GridSpec.for_domain((0.01, 0.01, 0.01), 0.001, absorber_cells=8)
    centres = spec.positions(0)
    faces = spec.positions(0, half=True)
    assert centres[8] == pytest.approx(-0.0045)
    assert faces[8] == pytest.approx(-0.004)
    assert spec.plane_index(0, -0.0045) == 8
    assert spec.plane_index(0, -0.0042) == 8
    assert spec.plane_index(0, 0.0) in (12, 13)
    with pytest.raises(GeometryError):
        spec.plane_index(1, 0.5)


def test_domain_must_be_whole_cells() -> None:
    with pytest.raises(GeometryError):
        GridSpec.for_domain((0.081, 0.08, 0.08), 0.002)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"cell_size": 0.0, "extents": (4, 4, 4)},
        {"cell_size": 0.001, "extents": (4, 0, 4)},
        {"cell_size": 0.001, "extents": (4, 4, 4), "absorber_cells": 6},
    ],
)
def test_invalid_grid_specs(kwargs: dict) -> None:
    with pytest.raises(ConfigurationError):
        GridSpec(**kwargs)


def test_thin_absorber_allowed_without_absorbing_axes() -> None:
    spec = GridSpec(0.001, (4, 4, 4), (Boundary.periodic,) * 3, absorber_cells=0)
    assert spec.padding == (0, 0, 0)


def test_resolution_limits(caplog: pytest.LogCaptureFixture) -> None:
    fine = GridSpec.for_domain((0.02, 0.02, 0.02), 0.001)
    assert check_resolution(fine, [MATCHING], F) > 15

    coarse = GridSpec.for_domain((0.02, 0.02, 0.02), 0.002)
    with caplog.at_level(logging.WARNING):
        cells = check_resolution(coarse, [MATCHING], F)
    assert 5 < cells < 10
    assert "cells per shortest wavelength" in caplog.text

    too_coarse = GridSpec.for_domain((0.02, 0.02, 0.02), 0.004)
    with pytest.raises(ResolutionError):
        check_resolution(too_coarse, [MATCHING], F)


def test_material_grid_lookup_and_counts() -> None:
    spec = GridSpec(0.001, (4, 4, 4), (Boundary.periodic,) * 3, absorber_cells=0)
    index = np.zeros(spec.shape, dtype=np.int32)
    index[:2] = 1
    chiral = BiIsotropicMaterial(eps_r=2.0, kappa=0.3)
    grid = MaterialGrid(index=index, materials=(BiIsotropicMaterial(), chiral), spec=spec)
    assert grid.parameter("eps_r")[0, 0, 0] == 2.0
    assert grid.parameter("eps_r")[3, 0, 0] == 1.0
    assert grid.cell_count(chiral) == 32
    assert grid.volume(chiral) == pytest.approx(32e-9)
    assert grid.cell_count(MATCHING) == 0
    assert grid.has_coupling
    assert np.array_equal(grid.lookup([10.0, 20.0])[:, 0, 0], [20.0, 20.0, 10.0, 10.0])


def test_material_grid_shape_must_match() -> None:
    spec = GridSpec(0.001, (4, 4, 4), (Boundary.periodic,) * 3)
    with pytest.raises(GeometryError):
        MaterialGrid(index=np.zeros((3, 4, 4), dtype=np.int32), materials=(MATCHING,), spec=spec)
