from __future__ import annotations

import csv
import hashlib
import json
import platform
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np
import pydantic
import scipy

import app
from app.config import settings
from app.enums import MapScale
from app.errors import ConfigurationError
from app.services.scan import ScanMap

_CORNER = {MapScale.linear: "z_mm\\x_mm power", MapScale.db: "z_mm\\x_mm power_db"}


class MapFormatError(ConfigurationError):
    pass


@dataclass(frozen=True)
class MapTable:
    """A scan map as read back from CSV: ``values[col, row]`` in the stated scale."""

    x_mm: np.ndarray
    z_mm: np.ndarray
    values: np.ndarray
    scale: MapScale

    def as_db(self, floor: float | None = None) -> np.ndarray:
        floor = settings.db_floor if floor is None else floor
        if self.scale is MapScale.db:
            return self.values
        with np.errstate(divide="ignore", invalid="ignore"):
            db = 10.0 * np.log10(self.values)
        return np.where(np.isnan(self.values), np.nan, np.maximum(np.nan_to_num(db, neginf=floor), floor))


def _format(value: float) -> str:
    return "nan" if np.isnan(value) else f"{value:.9e}"


def write_map_csv(path: Path, scan_map: ScanMap, scale: MapScale = MapScale.linear) -> Path:
    """Header row of x centres, first column of z centres, top row is the largest z."""
    values = scan_map.power if scale is MapScale.linear else scan_map.power_db()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [[_CORNER[scale], *(f"{x * 1e3:.6g}" for x in scan_map.x_centers)]]
    for row in reversed(range(len(scan_map.z_centers))):
        rows.append([f"{scan_map.z_centers[row] * 1e3:.6g}", *(_format(v) for v in values[:, row])])
    with path.open("w", newline="", encoding="utf-8") as handle:
        csv.writer(handle, lineterminator="\n").writerows(rows)
    return path


def read_map_csv(path: Path) -> MapTable:
    try:
        with Path(path).open(newline="", encoding="utf-8") as handle:
            rows = [row for row in csv.reader(handle) if row]
    except (OSError, UnicodeDecodeError) as exc:
        raise MapFormatError(f"cannot read map {path}: {exc}") from exc
    if len(rows) < 2:
        raise MapFormatError(f"{path}: expected a header row and at least one data row")
    corner = rows[0][0]
    scales = {label: scale for scale, label in _CORNER.items()}
    if corner not in scales:
        raise MapFormatError(f"{path}: unrecognised header cell {corner!r}")
    width = len(rows[0])
    if width < 2 or any(len(row) != width for row in rows):
        raise MapFormatError(f"{path}: rows have inconsistent lengths")
    try:
        x_mm = np.array([float(v) for v in rows[0][1:]])
        z_desc = np.array([float(row[0]) for row in rows[1:]])
        grid = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
    except ValueError as exc:
        raise MapFormatError(f"{path}: non-numeric entry ({exc})") from exc
    values = grid[::-1].T
    return MapTable(x_mm=x_mm, z_mm=z_desc[::-1], values=values, scale=scales[corner])


def render_pgm(table: MapTable, scale: int | None = None, floor: float | None = None) -> str:
    """Plain-text P2 graymap, dB range [floor, 0] mapped to [0, 255], one block per cell."""
    block = settings.render_scale if scale is None else scale
    if block < 1:
        raise ConfigurationError(f"render scale must be a positive integer, got {block}")
    floor = settings.db_floor if floor is None else floor
    db = table.as_db(floor)
    levels = np.rint((np.clip(db, floor, 0.0) - floor) / -floor * 255.0)
    levels = np.where(np.isnan(levels), 0, levels).astype(int)
    image = levels.T[::-1]
    image = np.kron(image, np.ones((block, block), dtype=int))
    height, width = image.shape
    lines = ["P2", f"{width} {height}", "255"]
    lines.extend(" ".join(str(v) for v in row) for row in image)
    return "\n".join(lines) + "\n"


def write_pgm(path: Path, table: MapTable, scale: int | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_pgm(table, scale), encoding="ascii")
    return path


def config_digest(document: dict[str, Any]) -> str:
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def versions() -> dict[str, str]:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pydantic": pydantic.VERSION,
        "app": app.__version__,
    }


def write_manifest(
    path: Path,
    document: dict[str, Any],
    scan_map: ScanMap,
    wall_time: float,
    jobs: int,
    outputs: list[str],
    support: np.ndarray | None = None,
) -> Path:
    manifest = {
        "config_sha256": config_digest(document),
        "engine": scan_map.engine.value,
        "jobs": jobs,
        "versions": versions(),
        "wall_time_s": round(wall_time, 3),
        "cells": [len(scan_map.x_centers), len(scan_map.z_centers)],
        "argmax_cell": list(scan_map.argmax_cell()) if np.any(np.isfinite(scan_map.power)) else None,
        "failures": scan_map.failures,
        "outputs": outputs,
        "diagnostics": [
            {**asdict(item), "status": item.status.value} for item in scan_map.diagnostics
        ],
    }
    if support is not None:
        manifest["chiral_support"] = [[int(col), int(row)] for col, row in zip(*np.nonzero(support))]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return path
