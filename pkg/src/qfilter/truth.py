"""Ground-truth trajectories for estimation experiments.

The hidden signal follows its own Euler path.  The quantum system is
propagated conditionally on the true signal: each step applies the exact
momentum kick ``exp(i (f(theta') - f(theta)) Q / hbar)``, the free and
dissipative evolution and a measurement update::

    rho' ~ M rho M^dag + dt (sum_a J_a rho J_a^dag - sum_jk C_jk L_j rho L_k^dag)
    M    = I - K dt + sum_j L_j du^j,        du = C dy

with the observation ``dy = <Q_j> dt + de`` drawn in the innovations
representation.  The update is positive for a single observed channel and
reproduces the reduced dynamics to first order in ``dt``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .filters import model_arrays
from .generator import SystemModel
from .operators import dagger
from .rng import trajectory_stream

TRUTH_STREAM = 1


@dataclass(frozen=True, eq=False)
class GroundTruth:
    theta: np.ndarray  # (N, n_steps + 1)
    dy: np.ndarray  # (N, n_steps, n)
    q_mean: np.ndarray  # (N, n_steps + 1, n) true <Q_j>
    dt: float
    seed: int
    indices: tuple[int, ...]


def _drift(model: SystemModel, theta: np.ndarray) -> np.ndarray:
    s = model.signal
    if callable(s.upsilon):
        return np.asarray(s.upsilon(theta), dtype=float)
    if np.ndim(s.upsilon) == 0:
        return float(s.upsilon) * theta
    return np.interp(theta, s.theta, s.upsilon_values)


def _coupling(model: SystemModel, theta: np.ndarray) -> np.ndarray:
    s = model.signal
    if isinstance(s.f, str):
        return theta.copy() if s.f == "identity" else np.zeros_like(theta)
    return np.interp(theta, s.theta, s.f_values)


def simulate_truth(
    model: SystemModel,
    rho0: np.ndarray,
    dt: float,
    n_steps: int,
    seed: int,
    indices: Iterable[int],
    theta_mean: float = 0.0,
    theta_var: float = 0.0,
) -> GroundTruth:
    """Simulate hidden signal, system and observation record for each index."""
    idx = tuple(int(i) for i in indices)
    n_traj, n = len(idx), model.n_observed
    nz = model.noise
    chol_out = np.linalg.cholesky(nz.output_cov) if n else np.zeros((0, 0))
    theta0 = np.empty(n_traj)
    dw = np.empty((n_traj, n_steps))
    dW = np.empty((n_traj, n_steps, n))
    for row, i in enumerate(idx):
        stream = trajectory_stream(seed, i, TRUTH_STREAM)
        theta0[row] = theta_mean + np.sqrt(theta_var) * stream.standard_normal()
        z = stream.standard_normal((n_steps, n + 1))
        dw[row] = np.sqrt(dt) * z[:, 0]
        dW[row] = np.sqrt(dt) * z[:, 1:] @ chol_out.T

    arr = model_arrays(model)
    c = nz.input_cov
    qvals, qvecs = np.linalg.eigh(model.Q)
    theta = np.empty((n_traj, n_steps + 1))
    theta[:, 0] = theta0
    dy = np.empty((n_traj, n_steps, n))
    qm = np.empty((n_traj, n_steps + 1, n))
    rho = np.repeat(np.asarray(rho0, dtype=complex)[None], n_traj, axis=0)
    sigma = model.signal.sigma
    coupled = not (isinstance(model.signal.f, str) and model.signal.f == "zero")
    eye = np.eye(model.dim)
    for k in range(n_steps + 1):
        qm[:, k] = np.real(np.einsum("jab,tba->tj", arr.Q_obs, rho))
        if k == n_steps:
            break
        th = theta[:, k]
        th_new = th - _drift(model, th) * dt + sigma * dw[:, k]
        theta[:, k + 1] = th_new
        if coupled:
            df = _coupling(model, th_new) - _coupling(model, th)
            phase = np.exp(1j * df[:, None] * qvals[None] / model.hbar)
            kick = np.einsum("ab,tb,cb->tac", qvecs, phase, qvecs.conj())
            rho = kick @ rho @ dagger(kick)
        dy[:, k] = qm[:, k] * dt + dW[:, k]
        du = dy[:, k] @ c.T
        m = eye[None] - dt * arr.K[None] + np.einsum("tj,jab->tab", du, arr.L_obs)
        new = m @ rho @ dagger(m)
        for ja in arr.jumps:
            new += dt * (ja @ rho @ dagger(ja))
        for j in range(n):
            for l in range(n):
                if c[j, l] != 0:
                    new -= dt * c[j, l] * (arr.L_obs[j] @ rho @ dagger(arr.L_obs[l]))
        new = 0.5 * (new + dagger(new))
        rho = new / np.real(np.trace(new, axis1=-2, axis2=-1))[:, None, None]
    return GroundTruth(theta=theta, dy=dy, q_mean=qm, dt=dt, seed=seed, indices=idx)
