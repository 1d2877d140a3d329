"""Repeated-interaction dilation: an exact finite model of the measured open system.

Each step couples the system to a fresh ancilla prepared in its ground state
through::

    U = exp( sqrt(dt) (L' (x) b^dag - L'^dag (x) b) - i dt (H / hbar) (x) I ),   L' = L / sqrt(kappa)

and then measures the ancilla quadrature ``b + b^dag``.  The outcome ``x``
maps to the output increment ``de = x sqrt(kappa dt)``.  Tracing out the
ancilla reproduces the no-signal reduced dynamics up to ``O(dt^2)``, and the
Kraus operators ``M_x = <x| U |0>`` give the exact Bayesian update of the
system state.  Ordering of tensor factors is system first.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .generator import SystemModel
from .operators import dagger, expm_antihermitian, ladder, trace_norm

MAX_CHAIN_DIM = 4096
MAX_STEPS = 6
UNITARY_TOL = 1e-12
PROB_FLOOR = 1e-300


class ChainSizeError(ValueError):
    pass


class DilationError(ValueError):
    pass


def _check_vacuum_model(model: SystemModel) -> float:
    if model.noise.m != 1 or model.n_observed != 1:
        raise DilationError("the dilation supports a single observed channel only")
    if model.signal.has_grid:
        raise DilationError("the dilation does not model a classical signal")
    kappa = model.noise.kappa[0, 0]
    if abs(kappa.imag) > 0:
        raise DilationError("single-channel intensity must be real")
    return float(kappa.real)


def build_step_unitary(model: SystemModel, dt: float, ancilla_dim: int = 2) -> np.ndarray:
    """One-step interaction unitary on ``system (x) ancilla``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    kappa = _check_vacuum_model(model)
    b = ladder(ancilla_dim)
    lp = model.L[0] / np.sqrt(kappa)
    gen = np.sqrt(dt) * (np.kron(lp, dagger(b)) - np.kron(dagger(lp), b))
    gen = gen - 1j * dt / model.hbar * np.kron(model.H, np.eye(ancilla_dim))
    u = expm_antihermitian(gen)
    err = np.abs(dagger(u) @ u - np.eye(len(u))).max()
    if err > UNITARY_TOL:
        raise DilationError(f"step unitary violates unitarity by {err:.3e}")
    return u


@dataclass(frozen=True, eq=False)
class ChainModel:
    """Finite chain of ``steps`` ancillas coupled one per time step."""

    model: SystemModel
    dt: float
    steps: int = 3
    ancilla_dim: int = 2

    def __post_init__(self):
        if not 1 <= self.steps <= MAX_STEPS:
            raise ChainSizeError(f"chain length must be in [1, {MAX_STEPS}], got {self.steps}")
        if self.ancilla_dim < 2:
            raise ChainSizeError("ancilla dimension must be at least 2")
        if self.total_dim > MAX_CHAIN_DIM:
            raise ChainSizeError(f"chain dimension {self.total_dim} exceeds {MAX_CHAIN_DIM}")
        _check_vacuum_model(self.model)

    @property
    def system_dim(self) -> int:
        return self.model.dim

    @property
    def total_dim(self) -> int:
        return self.system_dim * self.ancilla_dim**self.steps

    @property
    def kappa(self) -> float:
        return float(self.model.noise.kappa[0, 0].real)

    @property
    def step_unitary(self) -> np.ndarray:
        return build_step_unitary(self.model, self.dt, self.ancilla_dim)

    @property
    def quadrature(self) -> np.ndarray:
        b = ladder(self.ancilla_dim)
        return b + dagger(b)

    def outcomes(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues and eigenvectors of the measured ancilla quadrature."""
        return np.linalg.eigh(self.quadrature)

    def increments(self) -> np.ndarray:
        """Output increment ``de`` attached to each outcome."""
        return self.outcomes()[0] * np.sqrt(self.kappa * self.dt)

    def kraus(self) -> np.ndarray:
        """``M_x = <x| U |0>`` for every outcome, shape ``(outcomes, d, d)``."""
        d, a = self.system_dim, self.ancilla_dim
        u = self.step_unitary.reshape(d, a, d, a)[:, :, :, 0]
        _, vecs = self.outcomes()
        return np.einsum("ax,iaj->xij", vecs.conj(), u)

    def reduced_map(self, rho: np.ndarray) -> np.ndarray:
        """Unconditional one-step map ``Tr_anc U (rho (x) |0><0|) U^dag``."""
        ks = self.kraus()
        return np.einsum("xij,jk,xlk->il", ks, rho, ks.conj())

    def embed(self, op: np.ndarray, factor: int) -> np.ndarray:
        """Lift an operator on ``system (x) ancilla_factor`` to the full chain.

        ``factor`` is 1-based; ``factor = 0`` lifts a pure system operator.
        """
        d, a, n = self.system_dim, self.ancilla_dim, self.steps
        if factor == 0:
            return np.kron(op, np.eye(a**n))
        rest = a ** (n - 1)
        big = np.kron(op, np.eye(rest)).reshape([d, a] + [a] * (n - 1) + [d, a] + [a] * (n - 1))
        # source order: sys, anc_k, anc_1..anc_n without k
        others = [i for i in range(1, n + 1) if i != factor]
        src = [0, factor] + others
        perm = [src.index(i) for i in range(n + 1)]
        perm = perm + [p + n + 1 for p in perm]
        return big.transpose(perm).reshape(self.total_dim, self.total_dim)

    def ancilla_operator(self, op: np.ndarray, factor: int) -> np.ndarray:
        return self.embed(np.kron(np.eye(self.system_dim), op), factor)

    def chain_unitary(self, upto: int) -> np.ndarray:
        """``U(t) = U_t ... U_1`` on the full chain."""
        u = np.eye(self.total_dim, dtype=complex)
        step = self.step_unitary
        for k in range(1, upto + 1):
            u = self.embed(step, k) @ u
        return u


def check_nondemolition(
    chain: ChainModel, s_step: int, t_step: int, observable: np.ndarray | None = None
) -> float:
    """Spectral norm of ``[Y(s), X(t)]`` in the Heisenberg picture.

    ``Y(s)`` is the sum of measured quadratures of ancillas ``1..s`` after
    their interaction, ``X(t)`` the system observable after ``t`` steps.
    """
    if not (0 <= s_step <= chain.steps and 0 <= t_step <= chain.steps):
        raise ChainSizeError("step indices outside the chain")
    x = chain.model.H if observable is None else np.asarray(observable, dtype=complex)
    q = chain.quadrature
    y = sum(
        (chain.ancilla_operator(q, k) for k in range(1, s_step + 1)),
        np.zeros((chain.total_dim,) * 2, dtype=complex),
    )
    us, ut = chain.chain_unitary(s_step), chain.chain_unitary(t_step)
    y_s = dagger(us) @ y @ us
    x_t = dagger(ut) @ chain.embed(x, 0) @ ut
    return float(np.linalg.norm(y_s @ x_t - x_t @ y_s, 2))


@dataclass(frozen=True)
class ConditioningResult:
    outcomes: np.ndarray  # (steps,) outcome index
    increments: np.ndarray  # (steps,) matched de
    probabilities: np.ndarray  # (steps, outcomes) branch probabilities
    states: np.ndarray  # (steps + 1, d, d) exact posterior states


def run_exact_conditioning(
    chain: ChainModel, initial: np.ndarray, stream: np.random.Generator, steps: int | None = None
) -> ConditioningResult:
    """Sample a measurement record by Born's rule and return the exact posteriors.

    ``steps`` defaults to the chain length; longer runs reuse the step unitary
    with fresh ancillas.
    """
    steps = chain.steps if steps is None else int(steps)
    ks = chain.kraus()
    incs = chain.increments()
    rho = np.asarray(initial, dtype=complex)
    states = [rho]
    probs = np.empty((steps, len(ks)))
    picks = np.empty(steps, dtype=int)
    for n in range(steps):
        branches = np.einsum("xij,jk,xlk->xil", ks, rho, ks.conj())
        p = np.real(np.trace(branches, axis1=-2, axis2=-1))
        probs[n] = p
        k = int(stream.choice(len(p), p=np.maximum(p, 0) / np.maximum(p, 0).sum()))
        while p[k] < PROB_FLOOR:
            k = int(stream.choice(len(p), p=np.maximum(p, 0) / np.maximum(p, 0).sum()))
        rho = branches[k] / p[k]
        rho = 0.5 * (rho + dagger(rho))
        picks[n] = k
        states.append(rho)
    return ConditioningResult(picks, incs[picks], probs, np.array(states))


def filter_step_gap(chain: ChainModel, rho: np.ndarray, scheme: str = "euler") -> float:
    """Probability-weighted trace-norm gap between one normalised filter step and
    the exact Bayes update, averaged over the measurement outcomes."""
    from .filters import normalized_step_batch

    ks = chain.kraus()
    incs = chain.increments()
    rho = np.asarray(rho, dtype=complex)
    gap = 0.0
    for k, de in zip(ks, incs):
        branch = k @ rho @ dagger(k)
        p = float(np.real(np.trace(branch)))
        if p < PROB_FLOOR:
            continue
        exact = branch / p
        approx = normalized_step_batch(
            chain.model, rho[None, None], np.array([[de]]), chain.dt, scheme=scheme
        )[0, 0]
        gap += p * trace_norm(exact - approx)
    return gap
