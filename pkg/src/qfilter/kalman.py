"""Kalman-Bucy reference filter for the open oscillator driven by a diffusive force.

State ``x = (q, p, theta)`` in column convention::

    dq     = p dt
    dp     = -omega^2 q dt + d theta + df        (df: measurement back-action force)
    dtheta = -upsilon theta dt + sigma dw
    dy     = q dt + sqrt(gamma) dW

so ``dx = F x dt + noise`` with ``F = [[0, 1, 0], [-omega^2, 0, -upsilon], [0, 0, -upsilon]]``
and process-noise intensity ``Upsilon = [[0,0,0],[0, sigma^2 + s_g, sigma^2],[0, sigma^2, sigma^2]]``
where ``s_g = hbar^2 / (4 gamma)`` is the back-action intensity.  The posterior
covariance obeys ``K' = F K + K F^T + Upsilon - k^T k / gamma`` with ``k`` the
first row of ``K``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class RiccatiConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class KalmanParams:
    """Model constants.  ``printed_drift`` flips the sign of the force-on-momentum
    coupling, reproducing the alternative transcription of the drift matrix."""

    omega: float
    upsilon: float
    sigma: float
    gamma: float
    hbar: float
    printed_drift: bool = False

    def __post_init__(self):
        if not (self.omega > 0 and self.gamma > 0):
            raise ValueError("omega and gamma must be positive")
        if self.upsilon < 0 or self.sigma < 0 or self.hbar < 0:
            raise ValueError("upsilon, sigma and hbar must be non-negative")

    @property
    def sigma_gamma_sq(self) -> float:
        return self.hbar**2 / (4.0 * self.gamma)

    @property
    def drift(self) -> np.ndarray:
        coupling = self.upsilon if self.printed_drift else -self.upsilon
        return np.array(
            [[0.0, 1.0, 0.0], [-self.omega**2, 0.0, coupling], [0.0, 0.0, -self.upsilon]]
        )

    @property
    def row_drift(self) -> np.ndarray:
        """Drift in the row-vector convention ``dx + x M dt = ...`` (``M = -F^T``)."""
        return -self.drift.T

    @property
    def process_noise(self) -> np.ndarray:
        s2 = self.sigma**2
        return np.array([[0.0, 0.0, 0.0], [0.0, s2 + self.sigma_gamma_sq, s2], [0.0, s2, s2]])


@dataclass(frozen=True)
class KalmanState:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(3)
        cov = np.asarray(self.cov, dtype=float).reshape(3, 3)
        if np.abs(cov - cov.T).max() > 1e-12 * max(np.abs(cov).max(), 1.0):
            raise ValueError("Kalman covariance must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    def is_psd(self, tol: float = -1e-10) -> bool:
        return bool(np.linalg.eigvalsh(self.cov).min() >= tol)


def riccati_rhs(cov: np.ndarray, params: KalmanParams) -> np.ndarray:
    """``dK/dt`` of the posterior covariance."""
    f = params.drift
    k = cov[0]
    out = f @ cov + cov @ f.T + params.process_noise - np.outer(k, k) / params.gamma
    return 0.5 * (out + out.T)


def _rk4(cov: np.ndarray, dt: float, params: KalmanParams) -> np.ndarray:
    k1 = riccati_rhs(cov, params)
    k2 = riccati_rhs(cov + 0.5 * dt * k1, params)
    k3 = riccati_rhs(cov + 0.5 * dt * k2, params)
    k4 = riccati_rhs(cov + dt * k3, params)
    out = cov + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return 0.5 * (out + out.T)


def kalman_step(state: KalmanState, dy: float, dt: float, params: KalmanParams) -> KalmanState:
    """Advance mean (Euler, innovation ``(dy - q dt) / gamma``) and covariance (RK4)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x, cov = state.mean, state.cov
    innovation = (dy - x[0] * dt) / params.gamma
    mean = x + params.drift @ x * dt + cov[0] * innovation
    return KalmanState(mean, _rk4(cov, dt, params))


def covariance_path(cov0: np.ndarray, dt: float, n_steps: int, params: KalmanParams) -> np.ndarray:
    """Covariances ``K_0..K_n`` on the time grid, shape ``(n_steps + 1, 3, 3)``."""
    out = np.empty((n_steps + 1, 3, 3))
    out[0] = cov0
    for i in range(n_steps):
        out[i + 1] = _rk4(out[i], dt, params)
    return out


def run_kalman(
    params: KalmanParams, dy: np.ndarray, dt: float, mean0=None, cov0=None
) -> tuple[np.ndarray, np.ndarray]:
    """Filter a batch of records ``dy[N, n_steps]``.

    Returns the means ``(N, n_steps + 1, 3)`` and the shared covariance path
    ``(n_steps + 1, 3, 3)``; each trajectory is identical to repeated
    :func:`kalman_step` calls.
    """
    dy = np.atleast_2d(np.asarray(dy, dtype=float))
    n_traj, n_steps = dy.shape
    mean0 = np.zeros(3) if mean0 is None else np.asarray(mean0, dtype=float)
    cov0 = stationary_prior(params) if cov0 is None else np.asarray(cov0, dtype=float)
    covs = covariance_path(cov0, dt, n_steps, params)
    f = params.drift
    means = np.empty((n_traj, n_steps + 1, 3))
    means[:, 0] = mean0
    for i in range(n_steps):
        x = means[:, i]
        innovation = (dy[:, i] - x[:, 0] * dt) / params.gamma
        means[:, i + 1] = x + (x @ f.T) * dt + innovation[:, None] * covs[i, 0][None]
    return means, covs


def stationary_prior(params: KalmanParams) -> np.ndarray:
    """Ground-state oscillator variances and the stationary signal variance."""
    var_theta = params.sigma**2 / (2.0 * params.upsilon) if params.upsilon > 0 else 0.0
    return np.diag([params.hbar / (2.0 * params.omega), params.hbar * params.omega / 2.0, var_theta])


def stationary_riccati(
    params: KalmanParams,
    cov0: np.ndarray | None = None,
    dt: float = 0.01,
    max_time: float = 1e4,
    tol: float = 1e-12,
) -> np.ndarray:
    """Fixed point of the Riccati flow reached by RK4 time stepping."""
    cov = stationary_prior(params) if cov0 is None else np.asarray(cov0, dtype=float)
    for _ in range(int(max_time / dt)):
        if np.abs(riccati_rhs(cov, params)).max() <= tol:
            return cov
        cov = _rk4(cov, dt, params)
    raise RiccatiConvergenceError(
        f"Riccati flow not stationary after t={max_time:g} "
        f"(|rhs| = {np.abs(riccati_rhs(cov, params)).max():.3e})"
    )
