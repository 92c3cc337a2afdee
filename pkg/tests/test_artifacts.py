from __future__ import annotations

import json

import numpy as np
import pytest

from app.enums import CellStatus, Engine, MapScale
from app.errors import ConfigurationError
from app.services.artifacts import (
    MapFormatError,
    config_digest,
    read_map_csv,
    render_pgm,
    write_manifest,
    write_map_csv,
    write_pgm,
)
from app.services.scan import CellDiagnostic, ScanMap


def _map(power: np.ndarray) -> ScanMap:
    n_cols, n_rows = power.shape
    return ScanMap(
        values=np.sqrt(power).astype(complex),
        x_centers=(np.arange(n_cols) - (n_cols - 1) / 2) * 0.01,
        z_centers=(np.arange(n_rows) - (n_rows - 1) / 2) * 0.01,
        engine=Engine.tube,
        diagnostics=[CellDiagnostic(c, r, CellStatus.ok) for r in range(n_rows) for c in range(n_cols)],
    )


def _pixels(text: str) -> np.ndarray:
    lines = text.splitlines()
    return np.array([[int(v) for v in line.split()] for line in lines[3:]])


def test_linear_csv_layout_and_read_back(tmp_path) -> None:
    power = np.array([[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]])
    path = write_map_csv(tmp_path / "maps" / "map_linear.csv", _map(power))
    lines = path.read_text().splitlines()
    assert lines[0] == "z_mm\\x_mm power,-5,5"
    assert lines[1].startswith("10,")
    assert lines[3].startswith("-10,")

    table = read_map_csv(path)
    assert table.scale is MapScale.linear
    assert table.values == pytest.approx(power, rel=1e-8)
    assert table.x_mm == pytest.approx([-5.0, 5.0])
    assert table.z_mm == pytest.approx([-10.0, 0.0, 10.0])


def test_db_csv_applies_the_floor(tmp_path) -> None:
    power = np.array([[1.0, 0.01], [0.0, 1e-3]])
    table = read_map_csv(write_map_csv(tmp_path / "map_db.csv", _map(power), MapScale.db))
    assert table.scale is MapScale.db
    assert table.values == pytest.approx(np.array([[0.0, -20.0], [-80.0, -30.0]]))
    assert table.as_db() is table.values


def test_failed_cells_survive_as_nan(tmp_path) -> None:
    scan_map = _map(np.array([[0.5, 0.25]]))
    scan_map.values[0, 1] = complex(np.nan, np.nan)
    table = read_map_csv(write_map_csv(tmp_path / "map.csv", scan_map))
    assert np.isnan(table.values[0, 1])
    assert table.values[0, 0] == pytest.approx(0.5)


@pytest.mark.parametrize(
    "text",
    [
        "",
        "z_mm\\x_mm power,-5,5\n",
        "x,y\n1,2\n",
        "z_mm\\x_mm power,-5,5\n0,1\n",
        "z_mm\\x_mm power,-5,5\n0,1,abc\n",
    ],
)
def test_malformed_csv(tmp_path, text: str) -> None:
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(MapFormatError):
        read_map_csv(path)


def test_missing_csv(tmp_path) -> None:
    with pytest.raises(MapFormatError):
        read_map_csv(tmp_path / "absent.csv")


def test_render_of_an_empty_map_is_black(tmp_path) -> None:
    table = read_map_csv(write_map_csv(tmp_path / "map.csv", _map(np.zeros((3, 2)))))
    text = render_pgm(table, scale=4)
    assert text.splitlines()[:3] == ["P2", "12 8", "255"]
    assert not _pixels(text).any()


def test_render_places_a_bright_cell_as_a_white_block(tmp_path) -> None:
    power = np.zeros((3, 2))
    power[2, 1] = 1.0
    power[0, 0] = 1e-4
    table = read_map_csv(write_map_csv(tmp_path / "map.csv", _map(power)))
    pixels = _pixels(render_pgm(table, scale=3))
    assert pixels.shape == (6, 9)
    # top row of the image is the largest z
    assert np.all(pixels[:3, 6:] == 255)
    assert np.all(pixels[3:, :3] == 128)
    assert pixels.sum() == 9 * 255 + 9 * 128

    target = write_pgm(tmp_path / "img" / "map.pgm", table, 3)
    assert target.read_text(encoding="ascii") == render_pgm(table, scale=3)
    with pytest.raises(ConfigurationError):
        render_pgm(table, scale=0)


def test_config_digest_is_canonical() -> None:
    assert config_digest({"a": 1, "b": [1, 2]}) == config_digest({"b": [1, 2], "a": 1})
    assert config_digest({"a": 1}) != config_digest({"a": 2})
    assert len(config_digest({})) == 64


def test_manifest_contents(tmp_path) -> None:
    power = np.array([[0.0, 0.1], [0.7, 0.2]])
    support = np.array([[False, True], [True, False]])
    document = {"phantom": {"preset": "mini"}}
    path = write_manifest(tmp_path / "manifest.json", document, _map(power), 1.23456, 2, ["map_linear.csv"], support)
    manifest = json.loads(path.read_text())
    assert manifest["config_sha256"] == config_digest(document)
    assert manifest["engine"] == "tube"
    assert manifest["jobs"] == 2
    assert manifest["wall_time_s"] == 1.235
    assert manifest["cells"] == [2, 2]
    assert manifest["argmax_cell"] == [1, 0]
    assert manifest["failures"] == 0
    assert manifest["outputs"] == ["map_linear.csv"]
    assert manifest["chiral_support"] == [[0, 1], [1, 0]]
    assert {"python", "numpy", "scipy", "pydantic", "app"} <= set(manifest["versions"])
    assert manifest["diagnostics"][0]["status"] == "ok"
    assert len(manifest["diagnostics"]) == 4
