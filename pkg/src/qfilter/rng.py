"""Counter-based random streams: one independent stream per trajectory.

Stream ``i`` of global seed ``s`` is a Philox generator keyed by
``SeedSequence(s, spawn_key=(i, purpose))``, so any trajectory can be regenerated
on its own, in any order and in any worker process.
"""
from __future__ import annotations

from typing import Iterable

import numpy as np

from .noise import NoiseSpec, sample_increments

MAX_SEED = 2**64 - 1


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def trajectory_stream(seed: int, index: int, purpose: int = 0) -> np.random.Generator:
    """Generator for trajectory ``index``; ``purpose`` separates independent uses."""
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=(int(index), int(purpose)))
    return np.random.Generator(np.random.Philox(ss))


def trajectory_increments(
    spec: NoiseSpec, dt: float, n_steps: int, seed: int, index: int
) -> np.ndarray:
    """Input-noise increments ``(dv^1..dv^n, dw)`` for one trajectory, shape ``(n_steps, n+1)``."""
    return sample_increments(spec, dt, trajectory_stream(seed, index), size=n_steps)


def batch_increments(
    spec: NoiseSpec, dt: float, n_steps: int, seed: int, indices: Iterable[int]
) -> np.ndarray:
    """Stack of :func:`trajectory_increments`, shape ``(N, n_steps, n+1)``."""
    idx = list(indices)
    out = np.empty((len(idx), n_steps, spec.n_observed + 1))
    for row, i in enumerate(idx):
        out[row] = trajectory_increments(spec, dt, n_steps, seed, i)
    return out
