"""Reduced-dynamics generator on operator-valued functions of the signal.

A field is an array ``phi[..., g, :, :]`` of operators indexed by the grid
point ``g`` of the scalar signal ``theta``.  The pairing of an observable
field ``X`` with a density field ``phi`` is the trapezoid sum
``sum_g w_g Tr(X_g phi_g)``.

The Schrodinger-picture generator is::

    Lambda[phi] = delta(u phi) + (i/hbar)[phi, H] + 1/2 (sigma^2 delta^2 phi + Lambda_1[phi])
    delta phi   = phi' + f'(theta) [phi, R],            R = (i/hbar) Q
    delta^2 phi = phi'' + 2 f' [phi', R] + f'' [phi, R] + f'^2 [[phi, R], R]

with ``u(theta)`` the signal drift coefficient.  The scalar drift-diffusion
part ``(u phi)' + sigma^2/2 phi''`` uses a conservative flux stencil with
zero flux through both ends, so the total weight is conserved to round-off.
The Heisenberg generator is the exact adjoint of the discrete one with
respect to the pairing (grid stencils transposed, never re-discretised).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .noise import NoiseSpec
from .operators import DimensionError, as_operator, dagger, hermitian_part


class GridError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SignalModel:
    """Scalar diffusion ``d theta + u(theta) dt = sigma dw`` on a uniform grid.

    ``upsilon`` is either the coefficient of the linear drift ``u(theta) =
    upsilon * theta``, a callable, or an array of values on the grid.  ``f``
    is ``"identity"``, ``"zero"`` or a tuple ``(f, f', f'')`` of callables or
    grid arrays.  ``points == 1`` denotes a model without classical signal.
    """

    upsilon: float | np.ndarray | Callable = 0.0
    sigma: float = 0.0
    theta_min: float = 0.0
    theta_max: float = 0.0
    points: int = 1
    f: str | tuple = "identity"

    def __post_init__(self):
        if self.points == 1:
            return
        if int(self.points) != self.points or self.points < 3:
            raise GridError(f"signal grid needs at least 3 points, got {self.points}")
        if not self.theta_max > self.theta_min:
            raise GridError("signal grid needs theta_max > theta_min")
        if self.sigma < 0:
            raise GridError("sigma must be non-negative")

    @classmethod
    def none(cls) -> "SignalModel":
        return cls(f="zero")

    @property
    def has_grid(self) -> bool:
        return self.points > 1

    @cached_property
    def theta(self) -> np.ndarray:
        if not self.has_grid:
            return np.zeros(1)
        return np.linspace(self.theta_min, self.theta_max, self.points)

    @property
    def h(self) -> float:
        return (self.theta_max - self.theta_min) / (self.points - 1) if self.has_grid else 1.0

    @cached_property
    def weights(self) -> np.ndarray:
        if not self.has_grid:
            return np.ones(1)
        w = np.full(self.points, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    def _tabulate(self, spec) -> np.ndarray:
        if callable(spec):
            return np.asarray(spec(self.theta), dtype=float) * np.ones(self.points)
        arr = np.asarray(spec, dtype=float)
        if arr.ndim == 0:
            return float(arr) * np.ones(self.points)
        if arr.shape != (self.points,):
            raise GridError(f"tabulated function must have length {self.points}")
        return arr

    @cached_property
    def upsilon_values(self) -> np.ndarray:
        """Drift coefficient ``u(theta_g)`` on the grid."""
        if np.ndim(self.upsilon) == 0 and not callable(self.upsilon):
            return float(self.upsilon) * self.theta
        return self._tabulate(self.upsilon)

    @cached_property
    def _f_tables(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if isinstance(self.f, str):
            if self.f == "identity":
                return self.theta.copy(), np.ones(self.points), np.zeros(self.points)
            if self.f == "zero":
                z = np.zeros(self.points)
                return z, z, z
            raise GridError(f"unknown coupling function {self.f!r}")
        if len(self.f) != 3:
            raise GridError("coupling tables must be (f, f', f'')")
        return tuple(self._tabulate(t) for t in self.f)

    @property
    def f_values(self) -> np.ndarray:
        return self._f_tables[0]

    @property
    def f_prime(self) -> np.ndarray:
        return self._f_tables[1]

    @property
    def f_double_prime(self) -> np.ndarray:
        return self._f_tables[2]

    def gaussian_density(self, mean: float, var: float) -> np.ndarray:
        """Gaussian prior on the grid, normalised under the trapezoid weights."""
        if not self.has_grid:
            return np.ones(1)
        g = np.exp(-0.5 * (self.theta - mean) ** 2 / var)
        return g / np.dot(self.weights, g)


def derivative_matrix(points: int, h: float) -> sp.csr_matrix:
    """Central first derivative with one-sided second-order boundary rows."""
    n = points
    d = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        d[i, i - 1] = -0.5 / h
        d[i, i + 1] = 0.5 / h
    d[0, 0], d[0, 1], d[0, 2] = -1.5 / h, 2.0 / h, -0.5 / h
    d[n - 1, n - 1], d[n - 1, n - 2], d[n - 1, n - 3] = 1.5 / h, -2.0 / h, 0.5 / h
    return d.tocsr()


def laplacian_matrix(points: int, h: float) -> sp.csr_matrix:
    """Central second derivative with one-sided second-order boundary rows.

    Three-point grids fall back to the (first-order) interior row at the ends.
    """
    n = points
    lap = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        lap[i, i - 1], lap[i, i], lap[i, i + 1] = 1.0, -2.0, 1.0
    if n >= 4:
        for j, c in enumerate((2.0, -5.0, 4.0, -1.0)):
            lap[0, j] = c
            lap[n - 1, n - 1 - j] = c
    else:
        lap[0, :] = lap[1, :]
        lap[n - 1, :] = lap[1, :]
    return (lap / h**2).tocsr()


def drift_diffusion_matrix(signal: SignalModel) -> sp.csr_matrix:
    """Conservative stencil for ``(u p)' + sigma^2/2 p''`` with zero boundary flux.

    Row ``g`` is ``(F_{g+1/2} - F_{g-1/2}) / w_g`` with the face fluxes
    ``F = u_face (p_g + p_{g+1}) / 2 + sigma^2/2 (p_{g+1} - p_g) / h`` and
    ``F = 0`` outside the grid, so ``w @ A == 0`` exactly.
    """
    n, h = signal.points, signal.h
    u = signal.upsilon_values
    u_face = 0.5 * (u[:-1] + u[1:])
    diff = 0.5 * signal.sigma**2 / h
    # flux through face g+1/2 as coefficients of p_g (left) and p_{g+1} (right)
    left = 0.5 * u_face - diff
    right = 0.5 * u_face + diff
    w = signal.weights
    a = sp.lil_matrix((n, n))
    for g in range(n - 1):
        a[g, g] += left[g] / w[g]
        a[g, g + 1] += right[g] / w[g]
        a[g + 1, g] -= left[g] / w[g + 1]
        a[g + 1, g + 1] -= right[g] / w[g + 1]
    return a.tocsr()


def weighted_adjoint(mat: sp.spmatrix, weights: np.ndarray) -> sp.csr_matrix:
    """``W^-1 M^T W``: the transpose of ``M`` under the weighted pairing."""
    winv = sp.diags(1.0 / weights)
    return (winv @ mat.T @ sp.diags(weights)).tocsr()


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Open system coupled to a noise field and a classical diffusive signal."""

    hbar: float
    H: np.ndarray
    L: Sequence[np.ndarray]
    noise: NoiseSpec
    Q: np.ndarray | None = None
    signal: SignalModel = field(default_factory=SignalModel.none)

    def __post_init__(self):
        h = as_operator(self.H)
        d = h.shape[0]
        object.__setattr__(self, "H", hermitian_part(h))
        ls = tuple(as_operator(x) for x in self.L)
        for x in ls:
            if x.shape != (d, d):
                raise DimensionError(f"L operator of shape {x.shape}, system dim {d}")
        if len(ls) != self.noise.m:
            raise DimensionError(f"{len(ls)} L operators for {self.noise.m} noise channels")
        object.__setattr__(self, "L", ls)
        q = np.zeros((d, d), complex) if self.Q is None else as_operator(self.Q)
        if q.shape != (d, d):
            raise DimensionError("coupling coordinate Q has the wrong dimension")
        object.__setattr__(self, "Q", hermitian_part(q))
        if self.hbar <= 0:
            raise ValueError("hbar must be positive")

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    @property
    def n_observed(self) -> int:
        return self.noise.n_observed

    @cached_property
    def observed_Q(self) -> tuple[np.ndarray, ...]:
        """``Q_j = L_j + L_j^dag`` for the observed channels."""
        return tuple(x + dagger(x) for x in self.L[: self.n_observed])

    @cached_property
    def R(self) -> np.ndarray:
        return (1j / self.hbar) * self.Q

    @cached_property
    def grid(self) -> "GridStencils":
        return GridStencils.build(self.signal)

    @cached_property
    def signal_coefficients(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-point coefficients of ``[phi,R]``, ``[phi',R]`` and ``[[phi,R],R]``."""
        s = self.signal
        if not s.has_grid:
            z = np.zeros(1)
            return z, z, z
        fp, fpp = s.f_prime, s.f_double_prime
        c1 = s.upsilon_values * fp + 0.5 * s.sigma**2 * fpp
        c2 = s.sigma**2 * fp
        c3 = 0.5 * s.sigma**2 * fp**2
        return c1, c2, c3

    @cached_property
    def effective_drift(self) -> np.ndarray:
        """``K = (i/hbar) H + 1/2 sum kappa^{ik} L_k^dag L_i``."""
        kc = self.noise.kappa_contra
        k = (1j / self.hbar) * self.H
        for i, li in enumerate(self.L):
            for j, lk in enumerate(self.L):
                if kc[i, j] != 0:
                    k = k + 0.5 * kc[i, j] * dagger(lk) @ li
        return k

    @cached_property
    def jump_operators(self) -> tuple[np.ndarray, ...]:
        """``J_a`` with ``sum_a J_a phi J_a^dag = sum kappa^{ik} L_i phi L_k^dag``."""
        lam, u = np.linalg.eigh(self.noise.kappa_contra)
        jumps = []
        for a in range(len(lam)):
            j = sum(u[i, a] * li for i, li in enumerate(self.L))
            jumps.append(np.sqrt(max(lam[a], 0.0)) * j)
        return tuple(jumps)


@dataclass(frozen=True, eq=False)
class GridStencils:
    weights: np.ndarray
    D: sp.csr_matrix | None
    A: sp.csr_matrix | None
    lap: sp.csr_matrix | None
    D_adj: sp.csr_matrix | None
    A_adj: sp.csr_matrix | None

    @classmethod
    def build(cls, signal: SignalModel) -> "GridStencils":
        if not signal.has_grid:
            return cls(signal.weights, None, None, None, None, None)
        d = derivative_matrix(signal.points, signal.h)
        a = drift_diffusion_matrix(signal)
        w = signal.weights
        return cls(
            w, d, a, laplacian_matrix(signal.points, signal.h),
            weighted_adjoint(d, w), weighted_adjoint(a, w),
        )


@dataclass(eq=False)
class FieldState:
    """Operator-valued density ``phi_g`` on the signal grid with trapezoid weights."""

    phi: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=complex)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.phi.ndim != 3 or self.phi.shape[0] != self.weights.shape[0]:
            raise DimensionError(
                f"field of shape {self.phi.shape} does not match {self.weights.shape[0]} grid points"
            )

    @classmethod
    def product(cls, model: SystemModel, rho0: np.ndarray, density=None) -> "FieldState":
        """``phi_g = p(theta_g) rho0`` normalised to unit total weight."""
        w = model.signal.weights
        p = np.ones_like(w) if density is None else np.asarray(density, float)
        p = p / np.dot(w, p)
        rho0 = as_operator(rho0)
        rho0 = rho0 / np.trace(rho0).real
        return cls(p[:, None, None] * rho0[None], w)

    @property
    def weight(self) -> float:
        return total_weight(self.phi, self.weights)

    def copy(self) -> "FieldState":
        return FieldState(self.phi.copy(), self.weights)

    def marginal(self) -> np.ndarray:
        """System operator ``sum_g w_g phi_g``."""
        return np.tensordot(self.weights, self.phi, axes=(0, 0))

    def signal_density(self) -> np.ndarray:
        return np.real(np.trace(self.phi, axis1=-2, axis2=-1))


def total_weight(phi: np.ndarray, weights: np.ndarray) -> float:
    return float(np.dot(weights, np.real(np.trace(phi, axis1=-2, axis2=-1))))


def pairing(x, phi, weights=None) -> complex:
    """``sum_g w_g Tr(X_g phi_g)`` for fields (or raw arrays plus ``weights``)."""
    if isinstance(phi, FieldState):
        weights = phi.weights
        phi = phi.phi
    if isinstance(x, FieldState):
        x = x.phi
    x = np.broadcast_to(x, phi.shape)
    tr = np.einsum("...gij,...gji->...g", x, phi)
    return np.tensordot(tr, weights, axes=(-1, 0))


def grid_apply(mat: sp.spmatrix, phi: np.ndarray) -> np.ndarray:
    """Apply a grid stencil along axis ``-3`` of a (batched) field."""
    g = phi.shape[-3]
    moved = np.moveaxis(phi, -3, 0)
    out = mat @ moved.reshape(g, -1)
    return np.moveaxis(np.asarray(out).reshape(moved.shape), 0, -3)


def _comm(x, y):
    return x @ y - y @ x


def _unwrap(field):
    if isinstance(field, FieldState):
        return field.phi, field.weights, True
    return np.asarray(field, dtype=complex), None, False


def _wrap(arr, weights, was_field):
    return FieldState(arr, weights) if was_field else arr


def _coef(c: np.ndarray) -> np.ndarray:
    return c[:, None, None]


def delta(model: SystemModel, field):
    """Covariant derivative ``phi' + f'(theta) [phi, (i/hbar) Q]``."""
    phi, w, wrapped = _unwrap(field)
    if not model.signal.has_grid:
        raise GridError("delta needs a signal grid with at least 3 points")
    out = grid_apply(model.grid.D, phi) + _coef(model.signal.f_prime) * _comm(phi, model.R)
    return _wrap(out, w, wrapped)


def delta2(model: SystemModel, field):
    """Second covariant derivative in the expanded (commutator) form."""
    phi, w, wrapped = _unwrap(field)
    if not model.signal.has_grid:
        raise GridError("delta2 needs a signal grid with at least 3 points")
    s, r = model.signal, model.R
    dphi = grid_apply(model.grid.D, phi)
    c = _comm(phi, r)
    out = (
        grid_apply(model.grid.lap, phi)
        + 2.0 * _coef(s.f_prime) * _comm(dphi, r)
        + _coef(s.f_double_prime) * c
        + _coef(s.f_prime**2) * _comm(c, r)
    )
    return _wrap(out, w, wrapped)


def lindblad(model: SystemModel, phi: np.ndarray) -> np.ndarray:
    """``sum_ik kappa^{ik} ([L_i, phi L_k^dag] + [L_i phi, L_k^dag])`` (stacks allowed)."""
    phi = np.asarray(phi, dtype=complex)
    kc = model.noise.kappa_contra
    out = np.zeros_like(phi)
    for i, li in enumerate(model.L):
        li_phi = li @ phi
        for k, lk in enumerate(model.L):
            c = kc[i, k]
            if c == 0:
                continue
            lkd = dagger(lk)
            out += c * (2.0 * li_phi @ lkd - phi @ (lkd @ li) - (lkd @ li) @ phi)
    return out


def lindblad_adjoint(model: SystemModel, x: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`lindblad` under ``Tr(X phi)``."""
    x = np.asarray(x, dtype=complex)
    kc = model.noise.kappa_contra
    out = np.zeros_like(x)
    for i, li in enumerate(model.L):
        for k, lk in enumerate(model.L):
            c = kc[i, k]
            if c == 0:
                continue
            lkd = dagger(lk)
            out += c * (2.0 * lkd @ x @ li - (lkd @ li) @ x - x @ (lkd @ li))
    return out


def apply_generator(model: SystemModel, field):
    """Schrodinger-picture generator ``Lambda[phi]`` on the grid."""
    phi, w, wrapped = _unwrap(field)
    out = (1j / model.hbar) * _comm(phi, model.H) + 0.5 * lindblad(model, phi)
    if model.signal.has_grid:
        c1, c2, c3 = model.signal_coefficients
        r = model.R
        c = _comm(phi, r)
        out = out + grid_apply(model.grid.A, phi)
        out = out + _coef(c1) * c + _coef(c3) * _comm(c, r)
        out = out + _coef(c2) * _comm(grid_apply(model.grid.D, phi), r)
    return _wrap(out, w, wrapped)


def apply_heisenberg(model: SystemModel, x_field):
    """Heisenberg-picture generator, the discrete adjoint of :func:`apply_generator`."""
    x, w, wrapped = _unwrap(x_field)
    out = -(1j / model.hbar) * _comm(x, model.H) + 0.5 * lindblad_adjoint(model, x)
    if model.signal.has_grid:
        c1, c2, c3 = model.signal_coefficients
        r = model.R
        rx = _comm(r, x)
        out = out + grid_apply(model.grid.A_adj, x)
        out = out + _coef(c1) * rx + _coef(c3) * _comm(r, rx)
        out = out + grid_apply(model.grid.D_adj, _coef(c2) * rx)
    return _wrap(out, w, wrapped)
