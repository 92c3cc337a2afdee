from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from app.enums import Boundary
from app.errors import ConfigurationError
from app.services.grid import GeometryError, GridSpec
from app.services.media import BiIsotropicMaterial
from app.services.phantom import (
    Box,
    Ellipsoid,
    PhantomParams,
    Scene,
    SceneShape,
    build_head_scene,
    voxelize,
)

F = 2.45e9
WATER = BiIsotropicMaterial(eps_r=4.0)
TARGET = BiIsotropicMaterial(eps_r=4.0, kappa=0.5)
OTHER = BiIsotropicMaterial(eps_r=2.0, sigma=0.1)
DOMAIN = (0.06, 0.06, 0.06)


def _scene(*shapes: SceneShape) -> Scene:
    return Scene(WATER, shapes, DOMAIN, F)


def _spec(cell_size: float) -> GridSpec:
    return GridSpec.for_domain(DOMAIN, cell_size, absorber_cells=8)


def test_default_head_scene() -> None:
    scene = build_head_scene(PhantomParams())
    assert [item.name for item in scene.shapes] == ["head", "inclusion"]
    assert scene.background == BiIsotropicMaterial(eps_r=53.0, sigma=0.0)
    head, inclusion = scene.shapes
    assert head.material == BiIsotropicMaterial(eps_r=53.0, sigma=1.1)
    assert inclusion.material.kappa == 0.5
    assert inclusion.material.eps_r == 53.0
    assert inclusion.geometry.semiaxes == (0.020, 0.030, 0.010)
    assert max(inclusion.geometry.semiaxes) == inclusion.geometry.semiaxes[1]
    assert head.geometry.semiaxes == (0.090, 0.115, 0.100)
    assert len(scene.materials) == 3
    assert scene.chiral_shapes == (inclusion,)


def test_null_hypothesis_phantom() -> None:
    scene = build_head_scene(replace(PhantomParams(), inclusion_kappa=0.0))
    assert scene.chiral_shapes == ()
    assert scene.shapes[1].geometry == build_head_scene(PhantomParams()).shapes[1].geometry


def test_mini_preset() -> None:
    params = PhantomParams.mini()
    scene = build_head_scene(params)
    assert scene.domain_size == (0.08, 0.08, 0.08)
    assert scene.background.eps_r == 10.0
    head, inclusion = scene.shapes
    assert head.geometry.semiaxes == (0.03, 0.03, 0.03)
    assert head.material.sigma == 0.2
    assert sorted(inclusion.geometry.semiaxes) == [0.005, 0.010, 0.015]


def test_inclusion_must_stay_inside_head() -> None:
    with pytest.raises(GeometryError):
        build_head_scene(replace(PhantomParams(), inclusion_offset=(0.08, 0.0, 0.0)))


def test_shapes_must_fit_the_domain() -> None:
    with pytest.raises(GeometryError):
        _scene(SceneShape(Ellipsoid((0.02, 0.0, 0.0), (0.015, 0.01, 0.01)), TARGET))


def test_shape_validation() -> None:
    with pytest.raises(ConfigurationError):
        Ellipsoid((0.0, 0.0, 0.0), (0.01, -0.01, 0.01))
    with pytest.raises(ConfigurationError):
        Box((0.0, 0.0), (0.01, 0.01, 0.01))


def test_rotated_ellipsoid() -> None:
    body = Ellipsoid((0.0, 0.0, 0.0), (0.020, 0.030, 0.010), rotation=(0.0, 0.0, math.pi / 2))
    lo, hi = body.bounds()
    assert hi == pytest.approx([0.030, 0.020, 0.010])
    assert lo == pytest.approx([-0.030, -0.020, -0.010])
    assert body.contains(np.array([[0.029, 0.0, 0.0]]))[0]
    assert not body.contains(np.array([[0.0, 0.029, 0.0]]))[0]


def test_empty_scene_is_all_background() -> None:
    grid = voxelize(_scene(), _spec(0.003))
    assert grid.materials == (WATER,)
    assert np.all(grid.index == 0)


def test_aligned_box_cell_count() -> None:
    box = Box((-0.010, -0.006, -0.004), (0.020, 0.012, 0.008))
    scene = _scene(SceneShape(box, TARGET))
    for supersample in (1, 2):
        grid = voxelize(scene, _spec(0.002), supersample)
        assert grid.cell_count(TARGET) == 10 * 6 * 4


@pytest.mark.parametrize(
    "shape",
    [
        Ellipsoid((0.0, 0.0, 0.0), (0.020, 0.020, 0.020)),
        Ellipsoid((0.0, 0.0, 0.0), (0.020, 0.015, 0.010)),
    ],
)
def test_refinement_reduces_volume_error(shape: Ellipsoid) -> None:
    errors = []
    for cell_size in (0.004, 0.002, 0.001):
        grid = voxelize(_scene(SceneShape(shape, TARGET)), _spec(cell_size))
        errors.append(abs(grid.volume(TARGET) - shape.volume()))
    assert errors[0] > errors[1] > errors[2]


def test_sphere_volume_within_one_percent() -> None:
    sphere = Ellipsoid((0.0, 0.0, 0.0), (0.020, 0.020, 0.020))
    grid = voxelize(_scene(SceneShape(sphere, TARGET)), _spec(0.001))
    assert grid.volume(TARGET) == pytest.approx(4.0 / 3.0 * math.pi * 0.020**3, rel=0.01)


def test_painter_order() -> None:
    big = Box((-0.010, -0.010, -0.010), (0.020, 0.020, 0.020))
    small = Box((-0.004, -0.004, -0.004), (0.008, 0.008, 0.008))
    grid = voxelize(_scene(SceneShape(big, OTHER), SceneShape(small, TARGET)), _spec(0.002))
    assert grid.cell_count(TARGET) == 4**3
    assert grid.cell_count(OTHER) == 10**3 - 4**3

    hidden = voxelize(_scene(SceneShape(small, TARGET), SceneShape(big, OTHER)), _spec(0.002))
    assert hidden.materials == (WATER, OTHER)
    assert hidden.index.max() == 1


def test_voxelize_is_idempotent_and_order_free() -> None:
    left = SceneShape(Ellipsoid((-0.015, 0.0, 0.0), (0.010, 0.012, 0.008)), TARGET)
    right = SceneShape(Box((0.008, -0.01, -0.01), (0.015, 0.02, 0.02)), OTHER)
    spec = _spec(0.002)
    first = voxelize(_scene(left, right), spec)
    again = voxelize(_scene(left, right), spec)
    swapped = voxelize(_scene(right, left), spec)
    assert np.array_equal(first.index, again.index)
    resolved = np.array(first.materials, dtype=object)[first.index]
    resolved_swapped = np.array(swapped.materials, dtype=object)[swapped.index]
    assert np.array_equal(resolved, resolved_swapped)


def test_padding_repeats_background() -> None:
    edge = Box((-0.03, -0.03, -0.03), (0.06, 0.06, 0.06))
    spec = _spec(0.003)
    grid = voxelize(_scene(SceneShape(edge, OTHER)), spec)
    interior = grid.interior()
    assert np.all(interior == grid.materials.index(OTHER))
    assert np.all(grid.index[: spec.padding[0]] == 0)
    assert np.all(grid.index[:, :, -spec.padding[2] :] == 0)


def test_supersampling_keeps_ties_with_the_earlier_material() -> None:
    # the face at x = -1.5 mm splits one column of cells 4:4
    split = Box((-0.0015, -0.03, -0.03), (0.0315, 0.06, 0.06))
    spec = GridSpec.for_domain(DOMAIN, 0.003, (Boundary.periodic,) * 3)
    grid = voxelize(_scene(SceneShape(split, TARGET)), spec, supersample=2)
    assert grid.cell_count(TARGET) == 10 * 20 * 20
    assert np.all(grid.index[9] == 0)


def test_grid_must_match_the_scene_domain() -> None:
    with pytest.raises(GeometryError):
        voxelize(_scene(), GridSpec.for_domain((0.06, 0.06, 0.03), 0.003))
    with pytest.raises(ConfigurationError):
        voxelize(_scene(), _spec(0.003), supersample=3)


def test_empty_reference_and_scaled_chirality() -> None:
    scene = build_head_scene(PhantomParams.mini())
    assert scene.empty_reference().shapes == ()
    assert scene.empty_reference().background == scene.background
    flipped = scene.scaled_chirality(-1.0)
    assert flipped.shapes[1].material.kappa == -0.5
    assert flipped.shapes[0].material == scene.shapes[0].material
