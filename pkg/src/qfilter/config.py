"""Run configuration: flat ``dotted.key = value`` text with ``#`` comments.

Every key is declared in :data:`SCHEMA` with a parser and a default.  Unknown
keys, malformed values and inconsistent combinations raise
:class:`ConfigError` before any computation starts.  A ``manifest.json``
written by a previous run is accepted in place of a text file; its
``config`` block is the fully resolved configuration.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

MODES = ("linear", "normalized", "kalman", "compare", "dilation", "mgf-check", "noise-selftest")


class ConfigError(ValueError):
    pass


_PAIR = re.compile(r"\(\s*([^,()]+?)\s*,\s*([^,()]+?)\s*\)")


def parse_complex_pairs(text: str) -> list[complex]:
    """Parse ``"(re,im),(re,im),..."`` into complex numbers."""
    text = text.strip()
    pairs = _PAIR.findall(text)
    if not pairs or _PAIR.sub("", text).replace(",", "").strip():
        raise ConfigError(f"expected a list of (re,im) pairs, got {text!r}")
    try:
        return [complex(float(a), float(b)) for a, b in pairs]
    except ValueError as exc:
        raise ConfigError(f"bad complex pair in {text!r}") from exc


def format_complex_pairs(values) -> str:
    return ",".join(f"({float(z.real)!r},{float(z.imag)!r})" for z in np.ravel(values))


def _float(v: str) -> float:
    out = float(v)
    if not np.isfinite(out):
        raise ValueError("value must be finite")
    return out


def _positive(v: str) -> float:
    out = _float(v)
    if out <= 0:
        raise ValueError("value must be positive")
    return out


def _nonneg(v: str) -> float:
    out = _float(v)
    if out < 0:
        raise ValueError("value must be non-negative")
    return out


def _int_at_least(lo: int) -> Callable[[str], int]:
    def parse(v: str) -> int:
        f = float(v)
        if f != int(f) or int(f) < lo:
            raise ValueError(f"value must be an integer >= {lo}")
        return int(f)

    return parse


def _seed(v: str) -> int:
    out = int(v)
    if not 0 <= out < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return out


def _choice(*options: str) -> Callable[[str], str]:
    def parse(v: str) -> str:
        if v not in options:
            raise ValueError(f"must be one of {options}")
        return v

    return parse


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError("expected a boolean")


def _floats(v: str) -> tuple[float, ...]:
    return tuple(_float(x) for x in v.split(",") if x.strip())


def _names(v: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in v.split(",") if x.strip())


def _text(v: str) -> str:
    return v


def _pairs(v: str) -> tuple[complex, ...]:
    return tuple(parse_complex_pairs(v))


# key -> (parser, default as text or None for "derived")
SCHEMA: dict[str, tuple[Callable[[str], Any], str | None]] = {
    "mode": (_choice(*MODES), "normalized"),
    "system.kind": (_choice("oscillator", "qubit"), "oscillator"),
    "system.dim": (_int_at_least(2), "16"),
    "system.hbar": (_positive, "1.0"),
    "system.omega": (_positive, "1.0"),
    "system.l_ops": (_names, None),
    "system.l_scales": (_floats, None),
    "system.initial": (_text, "ground"),
    "noise.kappa": (_pairs, "(1.0,0.0)"),
    "noise.observed_channels": (_int_at_least(1), "1"),
    "signal.upsilon": (_nonneg, "0.0"),
    "signal.sigma": (_nonneg, "0.0"),
    "signal.f": (_text, "identity"),
    "signal.grid.min": (_float, "0.0"),
    "signal.grid.max": (_float, "0.0"),
    "signal.grid.points": (_int_at_least(1), "1"),
    "signal.prior_mean": (_float, "0.0"),
    "signal.prior_var": (_nonneg, None),
    "sim.dt": (_positive, "0.01"),
    "sim.t_final": (_positive, "1.0"),
    "sim.trajectories": (_int_at_least(1), "100"),
    "sim.seed": (_seed, "0"),
    "sim.source": (_choice("statistics", "filtering"), "statistics"),
    "sim.workers": (_int_at_least(1), "1"),
    "sim.chunk": (_int_at_least(1), "64"),
    "sim.record_every": (_int_at_least(1), "1"),
    "sim.scheme": (_choice("euler", "milstein"), "euler"),
    "sim.gain": (_choice("derived", "printed"), "derived"),
    "output.dir": (_text, "qfilter-out"),
    "output.format": (_choice("csv"), "csv"),
    "example.printed_drift": (_bool, "false"),
    "compare.convergence": (_bool, "false"),
    "mgf.beta_times": (_floats, "0.0"),
    "mgf.beta_values": (_floats, "0.0"),
    "mgf.observable": (_text, "identity"),
    "dilation.steps": (_int_at_least(1), "3"),
    "dilation.ancilla_dim": (_int_at_least(2), "2"),
    "dilation.observable": (_text, "H"),
}


def _default_l(kind: str) -> tuple[tuple[str, ...], tuple[float, ...]]:
    return (("q",), (0.5,)) if kind == "oscillator" else (("sigma_minus",), (1.0,))


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``values`` maps every schema key to its parsed value."""

    values: dict
    raw: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def resolved(self) -> dict[str, str]:
        """Every key as text, defaults and derived entries filled in."""
        return dict(sorted(self.raw.items()))

    @property
    def mode(self) -> str:
        return self.values["mode"]


def parse_text(text: str) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        key, value = (s.strip() for s in body.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        entries[key] = value
    return entries


def load_entries(path: str | Path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    if path.suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        block = data.get("config") if isinstance(data, dict) else None
        if not isinstance(block, dict):
            raise ConfigError(f"{path}: manifest has no 'config' block")
        return {str(k): str(v) for k, v in block.items()}
    return parse_text(text)


def build_config(entries: dict[str, str], overrides: dict[str, str] | None = None) -> RunConfig:
    raw = dict(entries)
    raw.update(overrides or {})
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    kind = raw.get("system.kind", SCHEMA["system.kind"][1])
    if kind == "qubit":
        raw.setdefault("system.dim", "2")
    ops, scales = _default_l(kind)
    raw.setdefault("system.l_ops", ",".join(ops))
    raw.setdefault("system.l_scales", ",".join(repr(s) for s in scales))
    for key, (_, default) in SCHEMA.items():
        if default is not None:
            raw.setdefault(key, default)
    values: dict[str, Any] = {}
    for key, text in raw.items():
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(text)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{key} = {text!r}: {exc}") from exc
    if "signal.prior_var" not in values:
        u, s = values["signal.upsilon"], values["signal.sigma"]
        var = s**2 / (2 * u) if u > 0 else 0.0
        values["signal.prior_var"] = var
        raw["signal.prior_var"] = repr(var)
    _validate(values)
    return RunConfig(values, raw)


def load_config(path: str | Path, overrides: dict[str, str] | None = None) -> RunConfig:
    return build_config(load_entries(path), overrides)


def _validate(v: dict) -> None:
    kappa = v["noise.kappa"]
    m = int(round(np.sqrt(len(kappa))))
    if m * m != len(kappa):
        raise ConfigError(f"noise.kappa has {len(kappa)} entries, not a square matrix")
    if v["noise.observed_channels"] > m:
        raise ConfigError("noise.observed_channels exceeds the number of channels")
    if len(v["system.l_ops"]) != m or len(v["system.l_scales"]) != m:
        raise ConfigError(f"system.l_ops and system.l_scales need {m} entries (one per channel)")
    if v["system.kind"] == "qubit" and v["system.dim"] != 2:
        raise ConfigError("a qubit system has dimension 2")
    pts = v["signal.grid.points"]
    if pts == 2:
        raise ConfigError("signal.grid.points must be 1 (no signal) or at least 3")
    if pts >= 3 and not v["signal.grid.max"] > v["signal.grid.min"]:
        raise ConfigError("signal.grid.max must exceed signal.grid.min")
    if v["sim.t_final"] < v["sim.dt"]:
        raise ConfigError("sim.t_final must be at least sim.dt")
    n_steps = v["sim.t_final"] / v["sim.dt"]
    if abs(n_steps - round(n_steps)) > 1e-9 * n_steps:
        raise ConfigError("sim.t_final must be an integer multiple of sim.dt")
    times = v["mgf.beta_times"]
    if len(times) != len(v["mgf.beta_values"]) or not times:
        raise ConfigError("mgf.beta_times and mgf.beta_values need the same, non-zero length")
    if times[0] != 0.0 or any(b <= a for a, b in zip(times, times[1:])):
        raise ConfigError("mgf.beta_times must start at 0 and increase")
    if v["mode"] in ("kalman", "compare") and (v["system.kind"] != "oscillator" or m != 1):
        raise ConfigError(f"mode {v['mode']} needs a single-channel oscillator")
    if v["mode"] == "compare" and pts < 3:
        raise ConfigError("mode compare needs a signal grid")
