"""Linear (unnormalised) and normalised quantum filters on the signal grid.

Both filters are integrated with Euler-Maruyama.  The linear filter is
driven by the contravariant increments ``dv`` and carries a weight
``p = sum_g w_g Tr phi_g`` that is a martingale under the reference measure.
The normalised filter is driven by the output increments ``de`` and keeps
``p = 1``.  With ``q_j = <L_j + L_j^dag>`` and ``C`` the covariance
intensity of ``dv``, Ito's rule applied to ``phi / p`` gives::

    d rho = Lambda[rho] dt + sum_j (L_j rho + rho L_j^dag - q_j rho) du^j
    du    = C (de - q dt)

Both steps are Euler-Maruyama by default.  ``scheme="milstein"`` adds the
second-order Ito-Taylor term ``1/2 sum_jk G_j G_k (du^j du^k - C_jk dt)``,
which gives strong order one when the noise maps commute (always true for a
single observed channel).

Every routine works on a batch of trajectories ``phi[N, G, d, d]``; the
single-trajectory API (:class:`FilterRun`) is a thin layer over it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from . import _kernels
from .generator import FieldState, SystemModel, apply_generator
from .operators import dagger, leakage

LOG_RESCALE = 200.0
WEIGHT_FLOOR = 1e-300
POSITIVITY_FLAG = -1e-8

GAINS = ("derived", "printed")
SCHEMES = ("euler", "milstein")


class FilterBlowUpError(FloatingPointError):
    """A filter step produced non-finite entries."""


class DegenerateTrajectoryError(FloatingPointError):
    """The filter weight collapsed below the representable range."""


@dataclass(frozen=True, eq=False)
class _ModelArrays:
    K: np.ndarray
    L_obs: np.ndarray
    Q_obs: np.ndarray
    jumps: np.ndarray
    R: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    c3: np.ndarray
    bands: tuple[int, int, int]


@lru_cache(maxsize=32)
def model_arrays(model: SystemModel) -> _ModelArrays:
    d = model.dim
    n = model.n_observed
    l_obs = np.array(model.L[:n]).reshape(n, d, d)
    q_obs = np.array(model.observed_Q).reshape(n, d, d)
    jumps = np.array(model.jump_operators).reshape(-1, d, d)
    c1, c2, c3 = model.signal_coefficients
    k = model.effective_drift
    bands = (
        _kernels.bandwidth(np.concatenate([k[None], l_obs])),
        _kernels.bandwidth(jumps) if len(jumps) else 0,
        _kernels.bandwidth(model.R),
    )
    return _ModelArrays(k, l_obs, q_obs, jumps, model.R, c1, c2, c3, bands)


def _check_finite(phi: np.ndarray, dt: float) -> None:
    # a single reduction: the sum is finite exactly when no entry is nan or inf
    # (or the entries are large enough to overflow, which is a blow-up as well)
    if not np.isfinite(phi.sum()):
        raise FilterBlowUpError(
            f"filter step produced non-finite entries at dt={dt:g}; try a smaller dt"
        )


def em_step_batch(
    model: SystemModel, phi: np.ndarray, dv: np.ndarray, dt: float, shift: np.ndarray | None = None
) -> np.ndarray:
    """One Euler-Maruyama step of the linear filter for ``N`` trajectories.

    Parameters
    ----------
    phi : ndarray, shape (N, G, d, d)
    dv : ndarray, shape (N, n)
        Contravariant observed increments.
    dt : float
    shift : ndarray, shape (N,), optional
        Real scalars ``c``; the step additionally subtracts ``c * phi``.
    """
    arr = model_arrays(model)
    dv = np.asarray(dv, dtype=float).reshape(phi.shape[0], model.n_observed)
    bmat = dt * arr.K[None] - np.einsum("tj,jab->tab", dv, arr.L_obs)
    if shift is not None:
        # B -> B + c/2 turns -(B phi + phi B^dag) into an extra -c phi
        bmat = bmat + 0.5 * np.asarray(shift, dtype=float)[:, None, None] * np.eye(model.dim)
    grid = model.grid
    out = _kernels.em_step(
        phi, bmat, arr.jumps, arr.R, arr.c1, arr.c2, arr.c3, dt,
        derivative=grid.D, drift=grid.A, bands=arr.bands,
    )
    _check_finite(out, dt)
    return out


def batch_weights(phi: np.ndarray, weights: np.ndarray) -> np.ndarray:
    tr = np.real(np.trace(phi, axis1=-2, axis2=-1))
    return tr @ weights


def observed_means(model: SystemModel, rho: np.ndarray) -> np.ndarray:
    """``q_j = sum_g w_g Tr(Q_j rho_g)`` for each trajectory, shape ``(N, n)``."""
    q = model_arrays(model).Q_obs
    tr = np.real(np.einsum("jab,tgba->tjg", q, rho))
    return tr @ model.signal.weights


def normalized_gain(model: SystemModel, gain: str = "derived") -> np.ndarray:
    """Matrix ``G`` in ``du = C de - G q dt``.

    ``"derived"`` is the Ito reduction of the linear filter (``G = C``).
    ``"printed"`` contracts the innovation with the contravariant
    ``kappa^{ji}`` between ``theta^-1`` factors; the two agree only when the
    observed intensity block is the identity.
    """
    nz = model.noise
    c = nz.input_cov
    if gain == "derived":
        return c
    if gain == "printed":
        n = nz.n_observed
        kc = np.real(nz.kappa_contra[:n, :n])
        return c @ kc @ c
    raise ValueError(f"gain must be one of {GAINS}, got {gain!r}")


def _check_scheme(scheme: str) -> None:
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")


def _noise_map(l: np.ndarray, x: np.ndarray) -> np.ndarray:
    return l @ x + x @ dagger(l)


def _second_order(dv: np.ndarray, cov: np.ndarray, dt: float) -> np.ndarray:
    """``du^j du^k - C_jk dt`` per trajectory, shape ``(N, n, n)``."""
    return dv[:, :, None] * dv[:, None, :] - dt * cov[None]


def linear_step_batch(
    model: SystemModel, phi: np.ndarray, dv: np.ndarray, dt: float, scheme: str = "euler"
) -> np.ndarray:
    """One step of the linear filter (Euler-Maruyama or Milstein)."""
    _check_scheme(scheme)
    out = em_step_batch(model, phi, dv, dt)
    if scheme == "milstein":
        l_obs = model_arrays(model).L_obs
        dv = np.asarray(dv, dtype=float).reshape(phi.shape[0], model.n_observed)
        s2 = _second_order(dv, model.noise.input_cov, dt)
        for k, lk in enumerate(l_obs):
            gk = _noise_map(lk, phi)
            for j, lj in enumerate(l_obs):
                out += 0.5 * s2[:, j, k, None, None, None] * _noise_map(lj, gk)
        _check_finite(out, dt)
    return out


def normalized_step_batch(
    model: SystemModel,
    rho: np.ndarray,
    de: np.ndarray,
    dt: float,
    gain: str = "derived",
    scheme: str = "euler",
) -> np.ndarray:
    """One step of the normalised filter for ``N`` trajectories."""
    _check_scheme(scheme)
    w = model.signal.weights
    de = np.asarray(de, dtype=float).reshape(rho.shape[0], model.n_observed)
    q = observed_means(model, rho)
    du = de @ model.noise.input_cov.T - dt * q @ normalized_gain(model, gain).T
    out = em_step_batch(model, rho, du, dt, shift=np.einsum("tj,tj->t", du, q))
    if scheme == "milstein":
        arr = model_arrays(model)
        s2 = _second_order(du, model.noise.input_cov, dt)
        for k, lk in enumerate(arr.L_obs):
            xi = _noise_map(lk, rho) - q[:, k, None, None, None] * rho
            tr_xi = np.real(np.einsum("jab,tgba->tjg", arr.Q_obs, xi)) @ w
            for j, lj in enumerate(arr.L_obs):
                dxi = (
                    _noise_map(lj, xi)
                    - tr_xi[:, j, None, None, None] * rho
                    - q[:, j, None, None, None] * xi
                )
                out += 0.5 * s2[:, j, k, None, None, None] * dxi
        _check_finite(out, dt)
    p = batch_weights(out, w)
    if np.any(~(p > WEIGHT_FLOOR)):
        raise DegenerateTrajectoryError(f"normalised weight collapsed (min {p.min():.3e})")
    out /= p[:, None, None, None]
    return out


def signal_means(model: SystemModel, phi: np.ndarray) -> np.ndarray:
    """Posterior mean of the signal ``theta`` per trajectory."""
    w = model.signal.weights
    tr = np.real(np.trace(phi, axis1=-2, axis2=-1))
    return (tr @ (w * model.signal.theta)) / (tr @ w)


def operator_means(phi: np.ndarray, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``sum_g w_g Tr(X phi_g) / p`` per trajectory for a system operator ``X``."""
    tr = np.real(np.einsum("ab,tgba->tg", x, phi))
    return (tr @ weights) / batch_weights(phi, weights)


def min_marginal_eigenvalue(phi: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of ``sum_g w_g phi_g`` divided by the weight."""
    marg = np.einsum("g,tgab->tab", weights, phi)
    ev = np.linalg.eigvalsh(0.5 * (marg + dagger(marg)))[:, 0]
    return ev / batch_weights(phi, weights)


# --------------------------------------------------------------------------
# single-trajectory interface


@dataclass(eq=False)
class TrajectoryRecord:
    """Observed record of one trajectory with its seed provenance."""

    times: np.ndarray
    dv: np.ndarray
    dw: np.ndarray
    dy: np.ndarray
    seed: int | None = None
    index: int | None = None

    def __post_init__(self):
        n = len(self.times) - 1
        for name in ("dv", "dw", "dy"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has {len(getattr(self, name))} steps, times imply {n}")


@dataclass(eq=False)
class FilterRun:
    """State and monitors of one filter integration."""

    model: SystemModel
    dt: float
    t_final: float
    state: FieldState
    mode: str = "linear"
    gain: str = "derived"
    scheme: str = "euler"
    t: float = 0.0
    log_weight: float = 0.0
    weight_history: list = field(default_factory=list)
    mean_history: list = field(default_factory=list)
    positivity_flags: int = 0
    max_leakage: float = 0.0

    def __post_init__(self):
        if self.mode not in ("linear", "normalized"):
            raise ValueError(f"mode must be 'linear' or 'normalized', got {self.mode!r}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_final < self.dt:
            raise ValueError("t_final must be at least dt")
        if self.mode == "normalized":
            p = self.state.weight
            self.state = FieldState(self.state.phi / p, self.state.weights)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def weight(self) -> float:
        """Total weight ``p`` including the factored-out log scale."""
        return float(np.exp(self.log_weight) * self.state.weight)

    def _monitor(self) -> None:
        phi = self.state.phi[None]
        w = self.state.weights
        if min_marginal_eigenvalue(phi, w)[0] < POSITIVITY_FLAG:
            self.positivity_flags += 1
        if self.model.dim > 2:  # a two-level system has no truncation to monitor
            self.max_leakage = max(self.max_leakage, leakage(self.state.marginal()))
        self.weight_history.append(self.weight)
        if self.model.signal.has_grid:
            self.mean_history.append(float(signal_means(self.model, phi)[0]))

    def _rescale(self) -> None:
        p = self.state.weight
        if p > 0 and abs(np.log(p)) > LOG_RESCALE:
            self.log_weight += float(np.log(p))
            self.state = FieldState(self.state.phi / p, self.state.weights)


def step_linear(run: FilterRun, dv, dt: float | None = None) -> FieldState:
    """Advance a linear-mode run by one step driven by ``dv``."""
    if run.mode != "linear":
        raise ValueError("step_linear needs a run in linear mode")
    dt = run.dt if dt is None else dt
    phi = linear_step_batch(
        run.model, run.state.phi[None], np.atleast_1d(dv)[None], dt, run.scheme
    )[0]
    run.state = FieldState(phi, run.state.weights)
    run.t += dt
    run._rescale()
    run._monitor()
    return run.state


def step_normalized(run: FilterRun, de, dt: float | None = None) -> FieldState:
    """Advance a normalised-mode run by one step driven by ``de``."""
    if run.mode != "normalized":
        raise ValueError("step_normalized needs a run in normalized mode")
    dt = run.dt if dt is None else dt
    rho = normalized_step_batch(
        run.model, run.state.phi[None], np.atleast_1d(de)[None], dt, run.gain, run.scheme
    )[0]
    run.state = FieldState(rho, run.state.weights)
    run.t += dt
    run._monitor()
    return run.state


def posterior_mean(run_or_state, x) -> float:
    """Posterior expectation of an observable field ``X`` (operator or per-point stack).

    In the scalar-weight representation the symmetric solve
    ``x p + p x = 2 <X, phi>`` reduces to ``<X, phi> / p``.
    """
    state = run_or_state.state if isinstance(run_or_state, FilterRun) else run_or_state
    x = np.asarray(x, dtype=complex)
    tr = np.einsum("...ab,gba->g", x, state.phi) if x.ndim == 2 else np.einsum(
        "gab,gba->g", x, state.phi
    )
    num = complex(np.dot(state.weights, tr))
    p = state.weight
    if not p > 0:
        raise ValueError(f"posterior mean needs a positive weight, got {p}")
    scale = max(abs(num), 1.0)
    if abs(num.imag) > 1e-10 * scale:
        raise ValueError(f"posterior mean has imaginary part {num.imag:.3e}; is X Hermitian?")
    return num.real / p


def signal_observable(model: SystemModel, func: Callable = None) -> np.ndarray:
    """Field ``X(theta_g) = func(theta_g) I`` (``func`` defaults to the identity)."""
    th = model.signal.theta
    vals = th if func is None else np.asarray(func(th), dtype=float) * np.ones_like(th)
    return vals[:, None, None] * np.eye(model.dim)[None]


# --------------------------------------------------------------------------
# deterministic reference and moment-generating check


def rk4_generator(model: SystemModel, phi: np.ndarray, t_final: float, dt: float, beta=None):
    """Integrate ``psi' = Lambda[psi] + sum_j beta_j(t) (L_j psi + psi L_j^dag)`` by RK4.

    ``beta`` is ``None`` or a callable ``t -> array(n)``.
    """
    l_obs = model_arrays(model).L_obs

    def rhs(t, psi):
        out = apply_generator(model, psi)
        if beta is not None:
            b = np.asarray(beta(t), dtype=float).reshape(-1)
            for j, lj in enumerate(l_obs):
                if b[j] != 0:
                    out = out + b[j] * (lj @ psi + psi @ dagger(lj))
        return out

    n_steps = int(round(t_final / dt))
    psi = np.asarray(phi, dtype=complex).copy()
    t = 0.0
    for _ in range(n_steps):
        k1 = rhs(t, psi)
        k2 = rhs(t + dt / 2, psi + dt / 2 * k1)
        k3 = rhs(t + dt / 2, psi + dt / 2 * k2)
        k4 = rhs(t + dt, psi + dt * k3)
        psi = psi + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += dt
    return psi


def beta_step_function(times, values) -> Callable:
    """Right-continuous step function with ``beta(t) = values[k]`` on ``[times[k], times[k+1])``."""
    times = np.asarray(times, dtype=float)
    values = np.atleast_2d(np.asarray(values, dtype=float).T).T
    if len(times) != len(values):
        raise ValueError("need one beta value per breakpoint")

    def beta(t: float) -> np.ndarray:
        k = int(np.searchsorted(times, t + 1e-12, side="right")) - 1
        return values[max(k, 0)]

    return beta


@dataclass(frozen=True)
class MgfResult:
    mc_estimate: float
    stderr: float
    ode_solution: float
    trajectories: int
    values: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def z_score(self) -> float:
        return (self.mc_estimate - self.ode_solution) / self.stderr if self.stderr > 0 else 0.0


def mgf_check(
    model: SystemModel,
    x: np.ndarray,
    beta: Callable,
    trajectories: int,
    t_final: float,
    dt: float,
    rho0: np.ndarray,
    seed: int = 0,
    density=None,
    ode_dt: float | None = None,
) -> MgfResult:
    """Compare the weighted Monte Carlo functional with the deterministic ODE.

    The Monte Carlo side averages ``<X, phi_T> exp(sum beta.de - 1/2 sum beta kappa_tilde beta dt)``
    over linear-filter trajectories driven by reference-measure increments.
    """
    from .rng import batch_increments

    if trajectories < 100:
        raise ValueError("mgf_check needs at least 100 trajectories")
    field0 = FieldState.product(model, rho0, density)
    n_steps = int(round(t_final / dt))
    nz = model.noise
    w = field0.weights
    xf = np.broadcast_to(np.asarray(x, dtype=complex), field0.phi.shape)
    betas = np.array([np.asarray(beta(k * dt), dtype=float).reshape(-1) for k in range(n_steps)])
    values = np.empty(trajectories)
    chunk = 2048
    for start in range(0, trajectories, chunk):
        idx = range(start, min(start + chunk, trajectories))
        inc = batch_increments(nz, dt, n_steps, seed, idx)
        phi = np.repeat(field0.phi[None], len(idx), axis=0)
        log_m = np.zeros(len(idx))
        for k in range(n_steps):
            dv = inc[:, k, : nz.n_observed]
            de = nz.output_from_input(dv)
            b = betas[k]
            log_m += de @ b - 0.5 * dt * b @ nz.output_cov @ b
            phi = em_step_batch(model, phi, dv, dt)
        pair = np.real(np.einsum("gab,tgba->tg", xf, phi)) @ w
        values[idx.start : idx.stop] = pair * np.exp(log_m)
    ode = rk4_generator(model, field0.phi, t_final, ode_dt or dt, beta)
    ode_val = float(np.real(np.einsum("gab,gba->g", xf, ode) @ w))
    return MgfResult(
        mc_estimate=float(values.mean()),
        stderr=float(values.std(ddof=1) / np.sqrt(trajectories)),
        ode_solution=ode_val,
        trajectories=trajectories,
        values=values,
    )
