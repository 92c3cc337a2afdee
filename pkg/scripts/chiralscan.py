from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError

REPO_ROOT = Path(__file__).resolve().parents[1]
if str(REPO_ROOT) not in sys.path:
    sys.path.insert(0, str(REPO_ROOT))

from app.config import settings  # noqa: E402
from app.enums import Engine, MapScale  # noqa: E402
from app.errors import ConfigurationError, PhysicsError  # noqa: E402
from app.schemas import RunConfig  # noqa: E402
from app.services.artifacts import read_map_csv, write_manifest, write_map_csv, write_pgm  # noqa: E402
from app.services.scan import FullWaveEngine, ScanAbortedError, chiral_support, run_scan  # noqa: E402
from app.services.slab1d import (  # noqa: E402
    polarimetry,
    power_fractions,
    stack_jones,
    stack_rotation,
    thickness_sweep,
)
from app.services.solver3d import column_scattering, write_field_dump  # noqa: E402

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PHYSICS = 3
EXIT_ABORTED = 4


def _configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s [%(levelname)s] %(message)s")


def _load_document(path: Path) -> dict[str, Any]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read configuration {path}: {exc}") from exc
    document = json.loads(text)
    if not isinstance(document, dict):
        raise ConfigurationError(f"{path}: the configuration must be a JSON object")
    return document


def _load_config(args: argparse.Namespace) -> tuple[RunConfig, dict[str, Any]]:
    if args.config is None:
        raise ConfigurationError(f"'{args.command}' needs --config")
    document = _load_document(args.config)
    return RunConfig.model_validate(document), document


def _output_dir(args: argparse.Namespace, config: RunConfig | None = None) -> Path:
    if args.out is not None:
        return Path(args.out)
    if config is not None and config.output.directory is not None:
        return config.output.directory
    return settings.output_dir


def _parse_cell(text: str) -> tuple[int, int]:
    try:
        col, row = (int(part) for part in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected COL,ROW, got {text!r}") from exc
    return col, row


def _parse_sweep(text: str) -> dict[str, float]:
    try:
        start, stop, steps = text.split(":")
        return {"start_mm": float(start), "stop_mm": float(stop), "steps": int(steps)}
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected START:STOP:STEPS in mm, got {text!r}") from exc


# ---------------------------------------------------------------------------
# slab


def _slab_config(args: argparse.Namespace) -> RunConfig:
    if args.config is not None:
        document = _load_document(args.config)
    else:
        if args.thickness_mm is None:
            raise ConfigurationError("slab needs --thickness-mm or a --config with a 'slab' section")
        document = {
            "frequency_hz": args.frequency,
            "materials": {
                "embedding": {},
                "slab": {
                    "eps_r": args.eps_r,
                    "sigma": args.sigma,
                    "mu_r": args.mu_r,
                    "kappa": args.kappa,
                    "chi": args.chi,
                },
            },
            "slab": {"embedding": "embedding", "layers": [{"material": "slab", "thickness_mm": args.thickness_mm}]},
        }
    if args.sweep is not None:
        document.setdefault("slab", {})["sweep"] = args.sweep
    return RunConfig.model_validate(document)


def _write_sweep(path: Path, rows: list) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(
            ["thickness_mm", "rotation_deg", "ellipticity_deg", "co_power", "cross_power", "transmitted", "reflected"]
        )
        for row in rows:
            writer.writerow(
                [
                    f"{row.thickness * 1e3:.6g}",
                    f"{math.degrees(row.rotation):.9f}",
                    f"{math.degrees(row.ellipticity):.9f}",
                    f"{row.co_power:.9e}",
                    f"{row.cross_power:.9e}",
                    f"{row.extra['transmitted']:.9e}",
                    f"{row.extra['reflected']:.9e}",
                ]
            )
    return path


def _run_slab(args: argparse.Namespace) -> int:
    config = _slab_config(args)
    stack = config.layer_stack()
    transmission, reflection = stack_jones(stack)
    report = polarimetry(transmission, reference=stack_rotation(stack))
    balance = power_fractions(stack, transmission, reflection)
    print(f"rotation: {math.degrees(report.rotation):.6f} deg")
    if report.turns:
        print(f"unwrapped rotation: {math.degrees(report.unwrapped_rotation):.6f} deg")
    print(f"ellipticity: {math.degrees(report.ellipticity):.6f} deg")
    print(f"co-pol power: {report.co_power:.6f}")
    print(f"cross-pol power: {report.cross_power:.6f}")
    print(f"transmitted power: {balance.transmitted:.6f}")
    print(f"reflected power: {balance.reflected:.6f}")

    if args.engine == Engine.full.value:
        column = column_scattering(stack)
        full = polarimetry(column.transmission)
        print(f"full-wave rotation: {math.degrees(full.rotation):.6f} deg")
        print(f"full-wave co-pol power: {full.co_power:.6f}")
        print(f"full-wave cross-pol power: {full.cross_power:.6f}")
        print(f"full-wave reflected power: {column.reflected_power:.6f}")

    sweep = config.slab.sweep
    if sweep is not None:
        if len(stack.layers) != 1:
            raise ConfigurationError("a thickness sweep needs a single-layer slab")
        thicknesses = np.linspace(sweep.start_mm, sweep.stop_mm, sweep.steps) * 1e-3
        rows = thickness_sweep(stack.layers[0].material, thicknesses, stack.frequency, stack.embedding_in)
        target = Path(args.csv) if args.csv else _output_dir(args, config) / "slab_sweep.csv"
        _write_sweep(target, rows)
        print(f"sweep: {len(rows)} rows written to {target}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# solve / scan


def _solver_options(config: RunConfig) -> dict[str, Any]:
    return {
        "tol": config.solver.tolerance,
        "direct_threshold": config.solver.direct_threshold,
        "max_iterations": config.solver.max_iterations,
        "supersample": config.grid.supersample if config.grid else 1,
    }


def _run_solve(args: argparse.Namespace) -> int:
    config, _ = _load_config(args)
    scene = config.build_scene()
    spec = config.grid_spec(scene)
    scan_cfg = config.scan.to_config(Engine.full)
    scan_cfg.check_extent(scene.domain_size)
    n_cols, n_rows = scan_cfg.cells
    col, row = args.cell if args.cell is not None else ((n_cols - 1) // 2, (n_rows - 1) // 2)
    if not (0 <= col < n_cols and 0 <= row < n_rows):
        raise ConfigurationError(f"cell ({col}, {row}) lies outside the {n_cols}x{n_rows} scan")

    started = time.perf_counter()
    engine = FullWaveEngine(scene, scan_cfg, spec, **_solver_options(config))
    scene_field, reference_field = engine.cell_fields(col, row)
    result = engine.calibrate(col, row, scene_field, reference_field)
    out_dir = _output_dir(args, config)
    dump = write_field_dump(out_dir / "field.bin", scene_field)
    power = abs(result.value) ** 2
    summary = {
        "cell": [col, row],
        "center_mm": [float(scan_cfg.x_centers[col] * 1e3), float(scan_cfg.z_centers[row] * 1e3)],
        "amplitude": [result.value.real, result.value.imag],
        "power": power,
        "power_db": 10.0 * math.log10(power) if power > 0 else settings.db_floor,
        "method": scene_field.method.value,
        "unknowns": engine.scene_op.unknowns,
        "residual": result.residual,
        "iterations": result.iterations,
        "wall_time_s": round(time.perf_counter() - started, 3),
        "field_dump": dump.name,
    }
    (out_dir / "solve.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    print(f"cell ({col}, {row}): cross-pol power {power:.6e} ({summary['power_db']:.2f} dB)")
    print(f"field written to {dump}")
    return EXIT_OK


def _run_scan(args: argparse.Namespace) -> int:
    config, document = _load_config(args)
    scene = config.build_scene()
    spec = config.grid_spec(scene)
    engine = Engine(args.engine) if args.engine else None
    scan_cfg = config.scan.to_config(engine)
    jobs = args.jobs or settings.scan_jobs

    started = time.perf_counter()
    scan_map = run_scan(scene, scan_cfg, spec, jobs=jobs, **_solver_options(config))
    wall_time = time.perf_counter() - started

    out_dir = _output_dir(args, config)
    formats = set(config.output.formats)
    outputs: list[str] = []
    linear = out_dir / "map_linear.csv"
    write_map_csv(linear, scan_map, MapScale.linear)
    outputs.append(linear.name)
    if "csv" in formats:
        outputs.append(write_map_csv(out_dir / "map_db.csv", scan_map, MapScale.db).name)
    if "pgm" in formats:
        outputs.append(write_pgm(out_dir / "map.pgm", read_map_csv(linear), config.output.render_scale).name)
    if "manifest" in formats:
        write_manifest(
            out_dir / "manifest.json",
            document,
            scan_map,
            wall_time,
            jobs,
            outputs,
            support=chiral_support(scene, scan_cfg),
        )
    if np.any(np.isfinite(scan_map.power)):
        col, row = scan_map.argmax_cell()
        print(
            f"argmax cell: ({col}, {row}) at x={scan_map.x_centers[col] * 1e3:.1f} mm, "
            f"z={scan_map.z_centers[row] * 1e3:.1f} mm"
        )
    print(f"{scan_map.engine.value} scan written to {out_dir} ({scan_map.failures} failed cells)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# render / validate


def _run_render(args: argparse.Namespace) -> int:
    source = Path(args.map)
    table = read_map_csv(source)
    target = Path(args.out) if args.out else source.with_suffix(".pgm")
    write_pgm(target, table, args.scale)
    print(f"render written to {target}")
    return EXIT_OK


def _run_validate(args: argparse.Namespace) -> int:
    config, _ = _load_config(args)
    if config.phantom is not None:
        geometry = f"phantom preset {config.phantom.preset}"
    elif config.scene is not None:
        geometry = f"scene with {len(config.scene.shapes)} shape(s)"
    else:
        geometry = "no geometry"
    grid = f"grid {config.grid.cell_size_mm:g} mm" if config.grid else "no grid"
    scan = f"scan {config.scan.cells[0]}x{config.scan.cells[1]} {config.scan.engine.value}"
    print(f"valid: {len(config.materials)} material(s), {geometry}, {grid}, {scan}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chiralscan", description="Chiral media solver and imaging simulator")
    parser.add_argument("--verbose", action="store_true", help="Enable debug logging")
    subparsers = parser.add_subparsers(dest="command")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="JSON run configuration.")
    common.add_argument(
        "--out",
        type=Path,
        default=None,
        help="Output directory (defaults to output.directory, then CHIRAL_OUTPUT_DIR).",
    )

    slab_parser = subparsers.add_parser("slab", parents=[common], help="Polarimetry of a layered chiral slab")
    slab_parser.add_argument("--kappa", type=float, default=0.0, help="Chirality parameter of the slab.")
    slab_parser.add_argument("--chi", type=float, default=0.0, help="Tellegen parameter of the slab.")
    slab_parser.add_argument("--eps-r", type=float, default=1.0, help="Relative permittivity of the slab.")
    slab_parser.add_argument("--mu-r", type=float, default=1.0, help="Relative permeability of the slab.")
    slab_parser.add_argument("--sigma", type=float, default=0.0, help="Conductivity of the slab in S/m.")
    slab_parser.add_argument("--thickness-mm", type=float, default=None, help="Slab thickness in mm.")
    slab_parser.add_argument(
        "--frequency", type=float, default=settings.frequency_hz, help="Frequency in Hz (default 2.45e9)."
    )
    slab_parser.add_argument(
        "--sweep", type=_parse_sweep, default=None, metavar="START:STOP:STEPS", help="Thickness sweep in mm."
    )
    slab_parser.add_argument("--csv", type=Path, default=None, help="Where to write the sweep CSV.")
    slab_parser.add_argument(
        "--engine",
        choices=[e.value for e in Engine],
        default=None,
        help="'full' also runs the periodic-column full-wave solve.",
    )
    slab_parser.set_defaults(func=_run_slab)

    solve_parser = subparsers.add_parser(
        "solve", parents=[common], help="Full-wave solve at one scan position with a field dump"
    )
    solve_parser.add_argument(
        "--cell", type=_parse_cell, default=None, metavar="COL,ROW", help="Scan cell (default: centre cell)."
    )
    solve_parser.set_defaults(func=_run_solve)

    scan_parser = subparsers.add_parser("scan", parents=[common], help="Cross-polarized transmission map")
    scan_parser.add_argument(
        "--engine", choices=[e.value for e in Engine], default=None, help="Override the configured engine."
    )
    scan_parser.add_argument("--jobs", type=int, default=None, help="Cells evaluated concurrently.")
    scan_parser.set_defaults(func=_run_scan)

    render_parser = subparsers.add_parser("render", help="Render a map CSV as a P2 graymap")
    render_parser.add_argument("map", help="Map CSV written by 'scan'.")
    render_parser.add_argument("--out", type=Path, default=None, help="Target image (default: next to the CSV).")
    render_parser.add_argument("--scale", type=int, default=None, help="Pixels per cell edge.")
    render_parser.set_defaults(func=_run_render)

    validate_parser = subparsers.add_parser("validate", parents=[common], help="Schema check only")
    validate_parser.set_defaults(func=_run_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 1
    _configure_logging(args.verbose)
    try:
        return args.func(args)
    except (ValidationError, ConfigurationError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ScanAbortedError as exc:
        print(f"scan aborted: {exc}", file=sys.stderr)
        return EXIT_ABORTED
    except PhysicsError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_PHYSICS
    except KeyboardInterrupt:
        logging.info("Interrupted")
        return 1


if __name__ == "__main__":
    sys.exit(main())
