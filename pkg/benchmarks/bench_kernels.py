#!/usr/bin/env python3
"""Time one linear-filter step with the numba kernel and the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--dim 16] [--points 129] [--batch 8] [--repeat 20]

Both backends run on identical inputs; the script checks that they agree
before reporting per trajectory-step timings.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from qfilter import _kernels
from qfilter.filters import em_step_batch
from qfilter.generator import FieldState, SignalModel, SystemModel
from qfilter.noise import NoiseSpec
from qfilter.operators import build_oscillator


def make_problem(dim: int, points: int, batch: int, seed: int = 0):
    osc = build_oscillator(dim, hbar=2.0, omega=1.0)
    signal = SignalModel(0.5, 0.5, -3.2, 3.2, points)
    model = SystemModel(2.0, osc.H, [0.5 * osc.Q], NoiseSpec.scalar(1.0), Q=osc.Q, signal=signal)
    field = FieldState.product(model, osc.coherent_density(0.3, -0.2), signal.gaussian_density(0.0, 0.25))
    phi = np.repeat(field.phi[None], batch, axis=0)
    dt = 0.005
    dv = np.random.default_rng(seed).standard_normal((batch, 1)) * np.sqrt(dt)
    return model, phi, dv, dt


def time_backend(name: str, model, phi, dv, dt, repeat: int, warmup: int = 2) -> tuple[float, np.ndarray]:
    previous = _kernels.use_backend(name)
    try:
        for _ in range(warmup):  # includes JIT compilation for numba
            out = em_step_batch(model, phi, dv, dt)
        t0 = time.perf_counter()
        for _ in range(repeat):
            out = em_step_batch(model, phi, dv, dt)
        elapsed = time.perf_counter() - t0
    finally:
        _kernels.use_backend(previous)
    return elapsed / (repeat * phi.shape[0]), out


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dim", type=int, default=16)
    parser.add_argument("--points", type=int, default=129)
    parser.add_argument("--batch", type=int, default=8)
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()

    model, phi, dv, dt = make_problem(args.dim, args.points, args.batch)
    print(f"dim={args.dim} grid={args.points} batch={args.batch} repeat={args.repeat}")
    results = {}
    for name in ("numpy", "numba"):
        per_step, out = time_backend(name, model, phi, dv, dt, args.repeat)
        results[name] = (per_step, out)
        print(f"{name:>6}: {per_step * 1e3:8.3f} ms per trajectory-step")
    gap = np.max(np.abs(results["numba"][1] - results["numpy"][1]))
    print(f"max |numba - numpy| = {gap:.2e}")
    print(f"speed-up: {results['numpy'][0] / results['numba'][0]:.2f}x")


if __name__ == "__main__":
    main()
