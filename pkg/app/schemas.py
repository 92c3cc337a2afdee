from __future__ import annotations

import math
from dataclasses import replace
from pathlib import Path
from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.config import settings
from app.enums import Boundary, Engine
from app.errors import ConfigurationError
from app.services.grid import GridSpec
from app.services.media import BiIsotropicMaterial
from app.services.phantom import Box, Ellipsoid, PhantomParams, Scene, SceneShape, build_head_scene
from app.services.scan import ScanConfig
from app.services.slab1d import Layer, LayerStack

MM = 1e-3
Triple = tuple[float, float, float]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)


class MaterialEntry(_Strict):
    eps_r: float = Field(1.0, gt=0)
    sigma: float = Field(0.0, ge=0, description="S/m")
    mu_r: float = Field(1.0, gt=0)
    kappa: float = 0.0
    chi: float = 0.0

    def to_material(self) -> BiIsotropicMaterial:
        return BiIsotropicMaterial(**self.model_dump())


class EllipsoidEntry(_Strict):
    kind: Literal["ellipsoid"] = "ellipsoid"
    material: str
    center_mm: Triple = (0.0, 0.0, 0.0)
    semiaxes_mm: Triple
    rotation_deg: Triple = (0.0, 0.0, 0.0)

    @field_validator("semiaxes_mm")
    @classmethod
    def _positive(cls, value: Triple) -> Triple:
        if any(v <= 0 for v in value):
            raise ValueError("semiaxes must be positive")
        return value


class BoxEntry(_Strict):
    kind: Literal["box"] = "box"
    material: str
    corner_mm: Triple
    size_mm: Triple

    @field_validator("size_mm")
    @classmethod
    def _positive(cls, value: Triple) -> Triple:
        if any(v <= 0 for v in value):
            raise ValueError("box size must be positive")
        return value


ShapeEntry = Annotated[Union[EllipsoidEntry, BoxEntry], Field(discriminator="kind")]


class SceneSection(_Strict):
    background: str
    domain_mm: Triple
    shapes: list[ShapeEntry] = Field(default_factory=list)


class PhantomSection(_Strict):
    """Parametrised head phantom; unset fields keep the preset's values."""

    preset: Literal["full", "mini"] = "full"
    domain_mm: Triple | None = None
    background_eps_r: float | None = Field(None, gt=0)
    background_sigma: float | None = Field(None, ge=0)
    head_semiaxes_mm: Triple | None = None
    head_eps_r: float | None = Field(None, gt=0)
    head_sigma: float | None = Field(None, ge=0)
    inclusion_semiaxes_mm: Triple | None = None
    inclusion_offset_mm: Triple | None = None
    inclusion_rotation_deg: Triple | None = None
    inclusion_kappa: float | None = None
    inclusion_chi: float | None = None
    inclusion_eps_r: float | None = Field(None, gt=0)
    inclusion_sigma: float | None = Field(None, ge=0)

    def to_params(self, frequency: float) -> PhantomParams:
        params = PhantomParams.mini() if self.preset == "mini" else PhantomParams()
        changes: dict[str, object] = {"frequency": frequency}
        for name in ("background_eps_r", "background_sigma", "head_eps_r", "head_sigma", "inclusion_kappa",
                     "inclusion_chi", "inclusion_eps_r", "inclusion_sigma"):
            value = getattr(self, name)
            if value is not None:
                changes[name] = value
        for name, target in (("domain_mm", "domain_size"), ("head_semiaxes_mm", "head_semiaxes"),
                             ("inclusion_semiaxes_mm", "inclusion_semiaxes"), ("inclusion_offset_mm", "inclusion_offset")):
            value = getattr(self, name)
            if value is not None:
                changes[target] = tuple(v * MM for v in value)
        if self.inclusion_rotation_deg is not None:
            changes["inclusion_rotation"] = tuple(math.radians(v) for v in self.inclusion_rotation_deg)
        return replace(params, **changes)


class GridSection(_Strict):
    cell_size_mm: float = Field(..., gt=0)
    boundaries: tuple[Boundary, Boundary, Boundary] = (Boundary.absorbing,) * 3
    absorber_cells: int | None = Field(None, ge=8)
    supersample: Literal[1, 2] = 1


class ScanSection(_Strict):
    cells: tuple[int, int] = (12, 12)
    pitch_mm: float = Field(20.0, gt=0)
    tx_polarization: Triple = (0.0, 0.0, 1.0)
    rx_polarization: Triple = (1.0, 0.0, 0.0)
    aperture_mm: tuple[float, float] = (14.752, 9.752)
    standoff_mm: float = Field(5.0, ge=0)
    engine: Engine = Engine.tube
    tube_rays: int | None = Field(None, ge=1)

    @model_validator(mode="after")
    def _orthogonal(self) -> "ScanSection":
        dot = sum(a * b for a, b in zip(self.tx_polarization, self.rx_polarization))
        if abs(dot) > 1e-9:
            raise ValueError(f"tx and rx polarizations must be orthogonal (dot product {dot:g})")
        if min(self.cells) < 1:
            raise ValueError("scan needs at least one cell per axis")
        return self

    def to_config(self, engine: Engine | None = None) -> ScanConfig:
        return ScanConfig(
            cells=self.cells,
            pitch=self.pitch_mm * MM,
            tx_polarization=self.tx_polarization,
            rx_polarization=self.rx_polarization,
            aperture=(self.aperture_mm[0] * MM, self.aperture_mm[1] * MM),
            standoff=self.standoff_mm * MM,
            engine=engine or self.engine,
            tube_rays=self.tube_rays or settings.tube_rays,
        )


class SolverSection(_Strict):
    tolerance: float = Field(default_factory=lambda: settings.solver_tolerance, ge=1e-10, le=1e-3)
    direct_threshold: int | None = Field(None, ge=0)
    max_iterations: int | None = Field(None, ge=1)


class OutputSection(_Strict):
    directory: Path | None = None
    formats: list[Literal["csv", "pgm", "manifest"]] = Field(default_factory=lambda: ["csv", "pgm", "manifest"])
    render_scale: int | None = Field(None, ge=1)


class LayerEntry(_Strict):
    material: str
    thickness_mm: float = Field(..., gt=0)


class SweepSection(_Strict):
    start_mm: float = Field(..., gt=0)
    stop_mm: float = Field(..., gt=0)
    steps: int = Field(..., ge=2)


class SlabSection(_Strict):
    embedding: str
    embedding_out: str | None = None
    layers: list[LayerEntry] = Field(default_factory=list)
    sweep: SweepSection | None = None


class RunConfig(_Strict):
    frequency_hz: float = Field(default_factory=lambda: settings.frequency_hz, gt=0)
    materials: dict[str, MaterialEntry] = Field(default_factory=dict)
    scene: SceneSection | None = None
    phantom: PhantomSection | None = None
    grid: GridSection | None = None
    scan: ScanSection = Field(default_factory=ScanSection)
    solver: SolverSection = Field(default_factory=SolverSection)
    output: OutputSection = Field(default_factory=OutputSection)
    slab: SlabSection | None = None

    @model_validator(mode="after")
    def _references(self) -> "RunConfig":
        if self.scene is not None and self.phantom is not None:
            raise ValueError("give either 'scene' or 'phantom', not both")
        names: list[str] = []
        if self.scene is not None:
            names.append(self.scene.background)
            names.extend(shape.material for shape in self.scene.shapes)
        if self.slab is not None:
            names.append(self.slab.embedding)
            if self.slab.embedding_out is not None:
                names.append(self.slab.embedding_out)
            names.extend(layer.material for layer in self.slab.layers)
        unknown = sorted(set(names) - set(self.materials))
        if unknown:
            raise ValueError(f"unknown material name(s): {', '.join(unknown)}")
        return self

    def material(self, name: str) -> BiIsotropicMaterial:
        return self.materials[name].to_material()

    def build_scene(self) -> Scene:
        if self.phantom is not None:
            return build_head_scene(self.phantom.to_params(self.frequency_hz))
        if self.scene is None:
            raise ConfigurationError("the configuration has neither a 'scene' nor a 'phantom' section")
        shapes = []
        for entry in self.scene.shapes:
            if isinstance(entry, EllipsoidEntry):
                geometry = Ellipsoid(
                    center=tuple(v * MM for v in entry.center_mm),
                    semiaxes=tuple(v * MM for v in entry.semiaxes_mm),
                    rotation=tuple(math.radians(v) for v in entry.rotation_deg),
                )
            else:
                geometry = Box(corner=tuple(v * MM for v in entry.corner_mm), size=tuple(v * MM for v in entry.size_mm))
            shapes.append(SceneShape(geometry, self.material(entry.material), entry.material))
        return Scene(
            background=self.material(self.scene.background),
            shapes=tuple(shapes),
            domain_size=tuple(v * MM for v in self.scene.domain_mm),
            frequency=self.frequency_hz,
        )

    def grid_spec(self, scene: Scene) -> GridSpec:
        if self.grid is None:
            raise ConfigurationError("the configuration has no 'grid' section")
        return GridSpec.for_domain(
            scene.domain_size,
            self.grid.cell_size_mm * MM,
            self.grid.boundaries,
            self.grid.absorber_cells,
        )

    def layer_stack(self) -> LayerStack:
        if self.slab is None:
            raise ConfigurationError("the configuration has no 'slab' section")
        embedding_in = self.material(self.slab.embedding)
        embedding_out = self.material(self.slab.embedding_out) if self.slab.embedding_out else embedding_in
        layers = tuple(Layer(self.material(entry.material), entry.thickness_mm * MM) for entry in self.slab.layers)
        return LayerStack(embedding_in, layers, embedding_out, self.frequency_hz)
