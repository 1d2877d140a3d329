"""Command line entry point: ``qfilter run <config> [overrides]``.

Writes ``manifest.json`` (resolved configuration, derived matrices,
versions), ``trajectories.csv`` and ``summary.json`` into the output
directory.  Exit status: 0 success, 2 invalid configuration, 3 numerical
blow-up (the summary is still written, flagged with ``"status": "blow-up"``).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .filters import DegenerateTrajectoryError, FilterBlowUpError

log = logging.getLogger("qfilter")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BLOWUP = 3

_OVERRIDES = {
    "mode": "mode",
    "seed": "sim.seed",
    "out": "output.dir",
    "trajectories": "sim.trajectories",
    "dt": "sim.dt",
}


def _version(pkg: str) -> str:
    try:
        return metadata.version(pkg)
    except metadata.PackageNotFoundError:
        return "unknown"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def run(config_path: str, overrides: dict[str, str]) -> int:
    from .experiments import build_experiment, derived_quantities, run_experiment_mode

    try:
        cfg = load_config(config_path, overrides)
        exp = build_experiment(cfg)
    except ConfigError as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_CONFIG
    out = Path(cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": cfg.resolved(),
        "derived": derived_quantities(exp),
        "seed": cfg["sim.seed"],
        "versions": {
            "qfilter": _version("artifact"),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": _version("scipy"),
            "numba": _version("numba"),
        },
    }
    write_json(out / "manifest.json", manifest)
    try:
        result = run_experiment_mode(exp)
    except ConfigError as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_CONFIG
    except (FilterBlowUpError, DegenerateTrajectoryError) as exc:
        log.error("numerical blow-up: %s", exc)
        write_json(out / "summary.json", {"status": "blow-up", "error": str(exc), "mode": cfg.mode})
        return EXIT_BLOWUP
    write_csv(out / "trajectories.csv", result.header, result.rows)
    write_json(out / "summary.json", {"status": "ok", **result.summary})
    log.info("wrote %d rows to %s", len(result.rows), out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qfilter", description="Quantum filtering simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run an experiment from a configuration file")
    run_p.add_argument("config", help="configuration file or a previous manifest.json")
    run_p.add_argument("--mode")
    run_p.add_argument("--seed")
    run_p.add_argument("--out")
    run_p.add_argument("--trajectories")
    run_p.add_argument("--dt")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = {
        key: str(getattr(args, flag))
        for flag, key in _OVERRIDES.items()
        if getattr(args, flag) is not None
    }
    return run(args.config, overrides)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
