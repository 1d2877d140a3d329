"""Quantum noise covariance algebra and sampling of the classical increments.

Conventions
-----------
``kappa`` is the Hermitian-positive intensity matrix of the input noise,
``kappa_tilde = kappa.T`` the output intensity, ``gamma`` their geometric
mean (``gamma @ inv(kappa) @ gamma == kappa_tilde``).  Contravariant
observed increments ``dv^j`` have covariance ``inv(kappa_tilde_obs) dt``,
where ``kappa_tilde_obs`` is the observed ``n x n`` block; the output
increments ``de_j`` have covariance ``kappa_tilde_obs dt`` and
``dv^j de_k = delta^j_k dt``.  The observed block has to be real, i.e. the
observed outputs commute and form a classical record.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .operators import dagger, herm_function, hermitian_part

EIG_FLOOR = 1e-14


class DomainError(ValueError):
    """Covariance matrix is not Hermitian positive definite."""


class NoiseModelError(ValueError):
    """Noise model cannot be realised as a classical observed record."""


class UnknownIncrementError(KeyError):
    pass


def _check_positive(kappa: np.ndarray) -> np.ndarray:
    k = np.atleast_2d(np.asarray(kappa, dtype=complex))
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise DomainError(f"covariance must be square, got shape {k.shape}")
    if not np.all(np.isfinite(k)):
        raise DomainError("covariance has non-finite entries")
    scale = max(np.abs(k).max(), 1e-300)
    if np.abs(k - dagger(k)).max() > 1e-12 * scale:
        raise DomainError("covariance is not Hermitian")
    w = np.linalg.eigvalsh(hermitian_part(k))
    if w.min() <= EIG_FLOOR * max(w.max(), 0.0):
        raise DomainError(f"covariance is not positive definite (min eigenvalue {w.min():.3e})")
    return hermitian_part(k)


def _geomean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a # b = a^1/2 (a^-1/2 b a^-1/2)^1/2 a^1/2`` for Hermitian-positive ``a, b``."""
    floor = EIG_FLOOR * float(np.linalg.eigvalsh(a).max())
    sa = herm_function(a, lambda w: np.sqrt(np.maximum(w, floor)))
    isa = herm_function(a, lambda w: 1.0 / np.sqrt(np.maximum(w, floor)))
    mid = herm_function(isa @ b @ isa, lambda w: np.sqrt(np.maximum(w, 0.0)))
    return hermitian_part(sa @ mid @ sa)


def _real_symmetric(g: np.ndarray, what: str) -> np.ndarray:
    scale = max(np.abs(g).max(), 1.0)
    if np.abs(g.imag).max() > 1e-10 * scale:
        raise DomainError(f"{what} is not real (max |Im| = {np.abs(g.imag).max():.3e})")
    g = g.real
    return 0.5 * (g + g.T)


def geometric_mean(kappa) -> np.ndarray:
    """Real symmetric ``gamma`` with ``gamma kappa^-1 gamma = kappa.T``.

    Examples
    --------
    >>> geometric_mean([[3 + 4j]])
    array([[5.]])
    """
    k = _check_positive(kappa)
    return _real_symmetric(_geomean(k, k.T.copy()), "geometric mean")


def standard_theta(kappa_sub) -> np.ndarray:
    """Real symmetric ``theta`` with ``theta kappa^-1 theta.T = conj(kappa)`` on the observed block."""
    k = _check_positive(kappa_sub)
    return _real_symmetric(_geomean(k, k.conj()), "theta")


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Noise intensities for ``m`` channels of which the first ``n`` are observed."""

    kappa: np.ndarray
    n_observed: int = 1
    m: int = field(init=False)

    def __post_init__(self):
        k = _check_positive(self.kappa)
        object.__setattr__(self, "kappa", k)
        object.__setattr__(self, "m", k.shape[0])
        n = int(self.n_observed)
        if not 0 <= n <= k.shape[0]:
            raise NoiseModelError(f"observed channel count {n} outside [0, {k.shape[0]}]")
        object.__setattr__(self, "n_observed", n)
        obs = k.T[:n, :n]
        if n and np.abs(obs.imag).max() > 1e-12 * np.abs(obs).max():
            raise NoiseModelError(
                "observed block of kappa_tilde has an imaginary part; the observed "
                "outputs would not commute"
            )

    @classmethod
    def scalar(cls, kappa: float) -> "NoiseSpec":
        return cls(np.array([[kappa]], dtype=complex), 1)

    @cached_property
    def kappa_tilde(self) -> np.ndarray:
        return self.kappa.T.copy()

    @cached_property
    def gamma(self) -> np.ndarray:
        return geometric_mean(self.kappa)

    @cached_property
    def kappa_contra(self) -> np.ndarray:
        """``kappa^{ik}``: inverse of ``kappa`` (dissipator intensities)."""
        return hermitian_part(np.linalg.inv(self.kappa))

    @cached_property
    def kappa_sub(self) -> np.ndarray:
        return self.kappa[: self.n_observed, : self.n_observed]

    @cached_property
    def theta(self) -> np.ndarray:
        return standard_theta(self.kappa_sub)

    @cached_property
    def output_cov(self) -> np.ndarray:
        """Real covariance intensity of ``de_j`` (observed block of ``kappa_tilde``)."""
        return self.kappa_tilde[: self.n_observed, : self.n_observed].real.copy()

    @cached_property
    def input_cov(self) -> np.ndarray:
        """Real covariance intensity of the contravariant ``dv^j``."""
        c = np.linalg.inv(self.output_cov)
        return 0.5 * (c + c.T)

    @cached_property
    def input_chol(self) -> np.ndarray:
        return np.linalg.cholesky(self.input_cov)

    def output_from_input(self, dv: np.ndarray) -> np.ndarray:
        """Map ``dv^j`` to ``de_j = kappa_tilde_obs dv`` (same classical record)."""
        return np.asarray(dv) @ self.output_cov.T

    def input_from_output(self, de: np.ndarray) -> np.ndarray:
        return np.asarray(de) @ self.input_cov.T

    def residuals(self) -> dict[str, float]:
        """Defining-relation residuals for ``gamma`` and ``theta``."""
        g = self.gamma
        res_g = np.abs(g @ np.linalg.inv(self.kappa) @ g - self.kappa_tilde).max()
        out = {"gamma": float(res_g)}
        if self.n_observed:
            t = self.theta
            res_t = np.abs(t @ np.linalg.inv(self.kappa_sub) @ t.T - self.kappa_sub.conj()).max()
            out["theta"] = float(res_t)
        return out


_LABEL = re.compile(r"^d(v|e|f)[\^_]?(\d+)$")


@dataclass(frozen=True, eq=False)
class ItoTable:
    """Ordered products of the stochastic differentials, per unit ``dt``.

    Labels: ``dv1..dvn`` (contravariant inputs), ``de1..den`` (outputs),
    ``df1..dfm`` (Langevin forces, never sampled), ``dw`` and ``dtheta``.
    """

    noise: NoiseSpec
    hbar: float = 1.0
    sigma: float = 0.0

    def _parse(self, label: str) -> tuple[str, int]:
        label = label.replace("ϑ", "theta")
        if label in ("dw", "dtheta"):
            return label, 0
        m = _LABEL.match(label)
        if not m:
            raise UnknownIncrementError(label)
        kind, idx = "d" + m.group(1), int(m.group(2))
        limit = self.noise.m if kind == "df" else self.noise.n_observed
        if not 1 <= idx <= limit:
            raise UnknownIncrementError(label)
        return kind, idx - 1

    @cached_property
    def _force_cov(self) -> np.ndarray:
        return (self.hbar / 2.0) ** 2 * np.linalg.inv(self.noise.kappa_tilde)

    def product(self, a: str, b: str) -> complex:
        (ka, i), (kb, j) = self._parse(a), self._parse(b)
        nz = self.noise
        pair = (ka, kb)
        if pair == ("dv", "dv"):
            return complex(nz.input_cov[i, j])
        if pair in (("dv", "de"), ("de", "dv")):
            return 1.0 + 0j if i == j else 0j
        if pair == ("de", "de"):
            return complex(nz.output_cov[i, j])
        if pair == ("df", "df"):
            return complex(self._force_cov[i, j])
        if pair == ("de", "df"):
            return 1j * self.hbar if i == j else 0j
        if pair == ("dw", "dw"):
            return 1.0 + 0j
        if pair == ("dtheta", "dtheta"):
            return complex(self.sigma**2)
        if pair in (("dtheta", "dw"), ("dw", "dtheta")):
            return complex(self.sigma)
        return 0j

    def labels(self) -> list[str]:
        n, m = self.noise.n_observed, self.noise.m
        return (
            [f"dv{j}" for j in range(1, n + 1)]
            + [f"de{j}" for j in range(1, n + 1)]
            + [f"df{k}" for k in range(1, m + 1)]
            + ["dw", "dtheta"]
        )


def ito_product(table: ItoTable, a: str, b: str) -> complex:
    return table.product(a, b)


def sample_increments(
    spec: NoiseSpec, dt: float, stream: np.random.Generator, size: int | None = None
) -> np.ndarray:
    """Draw ``(dv^1..dv^n, dw)``; shape ``(n + 1,)`` or ``(size, n + 1)``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = spec.n_observed
    shape = (n + 1,) if size is None else (size, n + 1)
    z = stream.standard_normal(shape)
    out = np.empty(shape)
    out[..., :n] = np.sqrt(dt) * z[..., :n] @ spec.input_chol.T
    out[..., n] = np.sqrt(dt) * z[..., n]
    return out
