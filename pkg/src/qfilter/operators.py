"""Dense finite-dimensional operator algebra.

Operators are plain complex ``numpy`` arrays of shape ``(d, d)``; anything
with extra leading axes is treated as a stack of operators.  All functions
here are pure.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HERMITIAN_TOL = 1e-12
POSITIVITY_TOL = -1e-10


class DimensionError(ValueError):
    """Raised for invalid or mismatched operator dimensions."""


class SingularSolveError(np.linalg.LinAlgError):
    """Raised when a symmetric solve meets a non positive-definite weight."""


def as_operator(x) -> np.ndarray:
    """Return ``x`` as a finite complex square matrix (validated)."""
    op = np.asarray(x, dtype=complex)
    if op.ndim != 2 or op.shape[0] != op.shape[1] or op.shape[0] < 1:
        raise DimensionError(f"expected a square matrix, got shape {op.shape}")
    if not np.all(np.isfinite(op)):
        raise ValueError("operator entries must be finite")
    return op


def dagger(x: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(x, -1, -2))


def _check_pair(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape[-1] != y.shape[-2] or x.shape[-2] != y.shape[-1]:
        raise DimensionError(f"dimension mismatch: {x.shape} vs {y.shape}")


def commutator(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    _check_pair(x, y)
    return x @ y - y @ x


def anticommutator(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    _check_pair(x, y)
    return x @ y + y @ x


def hermitian_part(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + dagger(x))


def opnorm(x: np.ndarray) -> float:
    """Spectral norm (largest singular value)."""
    return float(np.linalg.norm(x, 2)) if x.size else 0.0


def is_hermitian(x: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    scale = max(opnorm(x), 1.0)
    return opnorm(x - dagger(x)) <= tol * scale


def trace_norm(x: np.ndarray) -> float:
    """Sum of singular values; for Hermitian input the sum of |eigenvalues|."""
    return float(np.sum(np.linalg.svd(x, compute_uv=False)))


def check_density(rho: np.ndarray, normalized: bool = True) -> None:
    """Raise ``ValueError`` unless ``rho`` is a valid density operator."""
    rho = as_operator(rho)
    if not is_hermitian(rho):
        raise ValueError("density operator is not Hermitian")
    evals = np.linalg.eigvalsh(hermitian_part(rho))
    scale = max(opnorm(rho), 1.0)
    if evals.min() < POSITIVITY_TOL * scale:
        raise ValueError(f"density operator has eigenvalue {evals.min():.3e} < 0")
    if normalized and abs(np.trace(rho).real - 1.0) > 1e-10:
        raise ValueError(f"density operator has trace {np.trace(rho).real!r}")


def herm_function(a: np.ndarray, func) -> np.ndarray:
    """Apply ``func`` to the eigenvalues of Hermitian ``a``."""
    w, v = np.linalg.eigh(hermitian_part(a))
    return (v * func(w)) @ dagger(v)


def herm_sqrt(a: np.ndarray, floor: float = 0.0) -> np.ndarray:
    return herm_function(a, lambda w: np.sqrt(np.maximum(w, floor)))


def herm_inv_sqrt(a: np.ndarray, floor: float = 0.0) -> np.ndarray:
    return herm_function(a, lambda w: 1.0 / np.sqrt(np.maximum(w, floor)))


def expm_antihermitian(g: np.ndarray) -> np.ndarray:
    """``exp(g)`` for anti-Hermitian ``g`` via the eigenbasis of ``-i g``."""
    w, v = np.linalg.eigh(hermitian_part(-1j * g))
    return (v * np.exp(1j * w)) @ dagger(v)


def jordan_solve(p: np.ndarray, c: np.ndarray, tol: float = 1e-14) -> np.ndarray:
    """Solve ``X P + P X = 2 C`` for Hermitian ``X``.

    ``P`` must be Hermitian positive definite; the unique solution is built in
    the eigenbasis of ``P`` as ``X_ij = 2 C_ij / (lambda_i + lambda_j)``.
    Scalars are accepted and return a scalar.
    """
    scalar = np.ndim(p) == 0
    p_op = np.atleast_2d(np.asarray(p, dtype=complex))
    c_op = np.atleast_2d(np.asarray(c, dtype=complex))
    if p_op.shape != c_op.shape or p_op.shape[0] != p_op.shape[1]:
        raise DimensionError(f"dimension mismatch: {p_op.shape} vs {c_op.shape}")
    lam, v = np.linalg.eigh(hermitian_part(p_op))
    if lam.min() <= tol * max(abs(lam.max()), 1.0):
        raise SingularSolveError(
            f"weight operator is not positive definite (min eigenvalue {lam.min():.3e})"
        )
    c_eig = dagger(v) @ hermitian_part(c_op) @ v
    x = v @ (2.0 * c_eig / (lam[:, None] + lam[None, :])) @ dagger(v)
    x = hermitian_part(x)
    if scalar:
        return float(x[0, 0].real)
    return x


@dataclass(frozen=True)
class Oscillator:
    """Truncated harmonic oscillator with ``[Q, P] = i hbar`` below the cutoff."""

    dim: int
    hbar: float
    omega: float
    a: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    A: np.ndarray
    H: np.ndarray

    def number(self) -> np.ndarray:
        return np.diag(np.arange(self.dim, dtype=complex))

    def coherent_density(self, q: float = 0.0, p: float = 0.0) -> np.ndarray:
        """Density of the coherent state with mean position ``q``, momentum ``p``."""
        alpha = (self.omega * q + 1j * p) / np.sqrt(2.0 * self.hbar * self.omega)
        n = np.arange(self.dim)
        log_fact = np.cumsum(np.log(np.maximum(n, 1)))
        amp = np.exp(-0.5 * abs(alpha) ** 2 - 0.5 * log_fact) * alpha**n
        psi = amp / np.linalg.norm(amp)
        return np.outer(psi, psi.conj())


def ladder(dim: int) -> np.ndarray:
    """Truncated annihilation operator ``a`` with ``a|n> = sqrt(n)|n-1>``."""
    if int(dim) != dim or dim < 2:
        raise DimensionError(f"oscillator dimension must be an integer >= 2, got {dim!r}")
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1).astype(complex)


def build_oscillator(dim: int, hbar: float = 1.0, omega: float = 1.0) -> Oscillator:
    """Build ``Q, P`` and ``A = iP + omega Q``, ``H = A^dag A / 2`` on ``dim`` Fock levels."""
    if hbar <= 0 or omega <= 0:
        raise ValueError("hbar and omega must be positive")
    a = ladder(dim)
    ad = dagger(a)
    q = np.sqrt(hbar / (2.0 * omega)) * (a + ad)
    p = 1j * np.sqrt(hbar * omega / 2.0) * (ad - a)
    big_a = 1j * p + omega * q
    h = 0.5 * dagger(big_a) @ big_a
    h = hermitian_part(h)
    return Oscillator(dim=dim, hbar=hbar, omega=omega, a=a, Q=q, P=p, A=big_a, H=h)


def pauli() -> dict[str, np.ndarray]:
    """Pauli matrices in the basis ``(|e>, |g>)``; ``minus`` lowers ``|e>`` to ``|g>``."""
    return {
        "x": np.array([[0, 1], [1, 0]], dtype=complex),
        "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
        "z": np.array([[1, 0], [0, -1]], dtype=complex),
        "minus": np.array([[0, 0], [1, 0]], dtype=complex),
    }


def leakage(rho: np.ndarray, levels: int = 2) -> float:
    """Population of the top ``levels`` basis states (Fock truncation monitor)."""
    diag = np.real(np.diagonal(rho, axis1=-2, axis2=-1))
    total = diag.sum(axis=-1)
    return float(np.max(diag[..., -levels:].sum(axis=-1) / np.where(total == 0, 1, total)))
