"""Hot loops of the filter step, with a numba and a pure-numpy implementation.

The pointwise part of one Euler-Maruyama step of the linear filter is::

    phi' = phi - (B phi + phi B^dag) + dt sum_a J_a phi J_a^dag + dt [M, R]
    M    = c1 phi + c2 (D phi) + c3 [phi, R]

where ``B = dt K - sum_j dv_j L_j`` carries the drift and the noise, ``J_a``
are the diagonalised dissipator channels and ``R`` is anti-Hermitian; the
conservative drift-diffusion stencil adds ``dt A phi``.  ``phi'`` is
Hermitian whenever ``phi`` is, and both backends return an exactly
Hermitian result.  The numba kernel reduces every product to a banded
left multiplication with a contiguous inner loop, using the Hermitian
symmetry of the fields and the anti-Hermitian ``R``; the numpy path uses
dense batched products and sparse grid stencils.

The backend is chosen once at import time from ``QFILTER_BACKEND``
(``numba``, the default, or ``numpy``); :func:`use_backend` switches it at
runtime, which is what the benchmark and the cross-backend tests use.
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba as nb
except ImportError:  # pragma: no cover - numba is a declared dependency
    nb = None
else:
    # the work-queue layer is always present; probing TBB only produces warnings
    if "NUMBA_THREADING_LAYER" not in os.environ:
        nb.config.THREADING_LAYER = "workqueue"

_BACKENDS = ("numba", "numpy")


def _default_backend() -> str:
    name = os.environ.get("QFILTER_BACKEND", "numba").strip().lower()
    if name not in _BACKENDS:
        raise ValueError(f"QFILTER_BACKEND must be one of {_BACKENDS}, got {name!r}")
    if name == "numba" and nb is None:
        return "numpy"
    return name


_backend = _default_backend()


def backend() -> str:
    return _backend


def use_backend(name: str) -> str:
    """Select the kernel backend; returns the previous one."""
    global _backend
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and nb is None:
        raise RuntimeError("numba is not importable")
    prev, _backend = _backend, name
    return prev


def bandwidth(mat: np.ndarray, tol: float = 0.0) -> int:
    """Largest ``|i - j|`` over entries with ``|m_ij| > tol`` (0 for diagonal)."""
    mats = np.asarray(mat)
    mats = mats.reshape(-1, *mats.shape[-2:])
    nz = np.abs(mats).max(axis=0) > tol
    i, j = np.nonzero(nz)
    return int(np.abs(i - j).max()) if i.size else 0


def _em_numpy(phi, dphi, aphi, bmat, jumps, r, c1, c2, c3, dt):
    bp = bmat[:, None] @ phi
    out = phi - bp - np.conj(np.swapaxes(bp, -1, -2)) + dt * aphi
    for j in jumps:
        out = out + dt * (j @ phi @ np.conj(j.T))
    com = phi @ r - r @ phi
    m = c1[:, None, None] * phi + c2[:, None, None] * dphi + c3[:, None, None] * com
    out = out + dt * (m @ r - r @ m)
    return 0.5 * (out + np.conj(np.swapaxes(out, -1, -2)))


if nb is not None:

    @nb.njit(cache=True)
    def _stencil_row(ptr, idx, val, g, phi_t, out):
        # out = sum_k S[g, k] phi_t[k]
        d = out.shape[0]
        for i in range(d):
            for j in range(d):
                out[i, j] = 0j
        for p in range(ptr[g], ptr[g + 1]):
            c = val[p]
            x = phi_t[idx[p]]
            for i in range(d):
                for j in range(d):
                    out[i, j] += c * x[i, j]

    @nb.njit(cache=True, fastmath=True)
    def _band_left(a, bw, x, out):
        # out = a @ x for a banded a; the inner loop runs along contiguous rows
        d = out.shape[0]
        for i in range(d):
            for j in range(d):
                out[i, j] = 0j
            for k in range(max(0, i - bw), min(d, i + bw + 1)):
                c = a[i, k]
                if c != 0:
                    for j in range(d):
                        out[i, j] += c * x[k, j]

    @nb.njit(cache=True)
    def _mirror(m):
        d = m.shape[0]
        for i in range(d):
            m[i, i] = m[i, i].real
            for j in range(i + 1, d):
                m[j, i] = np.conj(m[i, j])

    @nb.njit(cache=True, parallel=True)
    def _em_numba(
        phi, bmat, bw_b, jumps, bw_j, r, bw_r, c1, c2, c3, dt,
        d_ptr, d_idx, d_val, a_ptr, a_idx, a_val, has_grid,
    ):
        n_traj, n_pts, d, _ = phi.shape
        out = np.empty_like(phi)
        for t in nb.prange(n_traj):
            work = np.zeros((6, d, d), dtype=np.complex128)
            bm = bmat[t]
            for g in range(n_pts):
                _em_point(
                    phi[t], g, out[t, g], bm, bw_b, jumps, bw_j, r, bw_r, c1[g], c2[g], c3[g],
                    dt, d_ptr, d_idx, d_val, a_ptr, a_idx, a_val, has_grid, work,
                )
        return out

    @nb.njit(cache=True, fastmath=True)
    def _em_point(
        phi_t, g, res, bm, bw_b, jumps, bw_j, r, bw_r, c1, c2, c3, dt,
        d_ptr, d_idx, d_val, a_ptr, a_idx, a_val, has_grid, work,
    ):
        # x, m and D x are Hermitian and r is anti-Hermitian, so
        # [x, r] = -(r x + (r x)^dag) and J x J^dag = J (J x)^dag: only left products are needed
        d = res.shape[0]
        x = phi_t[g]
        dx, ax, p, s, m = work[0], work[1], work[2], work[3], work[4]
        if has_grid:
            _stencil_row(d_ptr, d_idx, d_val, g, phi_t, dx)
            _stencil_row(a_ptr, a_idx, a_val, g, phi_t, ax)
        _band_left(bm, bw_b, x, p)
        for i in range(d):
            for j in range(d):
                res[i, j] = x[i, j] - p[i, j] - np.conj(p[j, i]) + dt * ax[i, j]
        _band_left(r, bw_r, x, s)
        for i in range(d):
            for j in range(d):
                m[i, j] = c1 * x[i, j] + c2 * dx[i, j] - c3 * (s[i, j] + np.conj(s[j, i]))
        _band_left(r, bw_r, m, s)
        for i in range(d):
            for j in range(d):
                res[i, j] -= dt * (s[i, j] + np.conj(s[j, i]))
        tmp = work[5]
        for a in range(jumps.shape[0]):
            jm = jumps[a]
            _band_left(jm, bw_j, x, p)
            for i in range(d):
                for j in range(d):
                    tmp[i, j] = np.conj(p[j, i])
            _band_left(jm, bw_j, tmp, s)
            for i in range(d):
                for j in range(d):
                    res[i, j] += dt * s[i, j]
        _mirror(res)


def _csr_parts(mat):
    if mat is None:
        return np.zeros(1, np.int64), np.zeros(0, np.int64), np.zeros(0, np.float64)
    return (
        mat.indptr.astype(np.int64),
        mat.indices.astype(np.int64),
        mat.data.astype(np.float64),
    )


def em_step(phi, bmat, jumps, r, c1, c2, c3, dt, derivative=None, drift=None, bands=None):
    """One Euler-Maruyama step of the linear filter for a batch of fields.

    Parameters
    ----------
    phi : ndarray, shape (N, G, d, d)
        Hermitian fields, one per trajectory.
    bmat : ndarray, shape (N, d, d)
        Per-trajectory ``B = dt K - sum_j dv_j L_j``.
    jumps : ndarray, shape (a, d, d)
        Dissipator channels ``J_a``.
    r : ndarray, shape (d, d)
        Anti-Hermitian coupling ``(i/hbar) Q``.
    c1, c2, c3 : ndarray, shape (G,)
        Signal coefficients.
    dt : float
    derivative, drift : scipy.sparse.csr_matrix, optional
        Grid stencils ``D`` and the drift-diffusion flux; omit both without a grid.
    bands : tuple of int, optional
        Bandwidths of ``B``, ``J`` and ``R``; detected when omitted.
    """
    phi = np.ascontiguousarray(phi, dtype=np.complex128)
    d = phi.shape[-1]
    jumps = np.ascontiguousarray(jumps, dtype=np.complex128).reshape(-1, d, d)
    has_grid = derivative is not None
    if _backend == "numpy":
        if has_grid:
            g = phi.shape[-3]
            flat = np.moveaxis(phi, -3, 0).reshape(g, -1)
            dphi = np.moveaxis((derivative @ flat).reshape(g, *phi.shape[:-3], d, d), 0, -3)
            aphi = np.moveaxis((drift @ flat).reshape(g, *phi.shape[:-3], d, d), 0, -3)
        else:
            dphi = aphi = np.zeros_like(phi)
        return _em_numpy(phi, dphi, aphi, bmat, jumps, r, c1, c2, c3, dt)
    if bands is None:
        bands = (bandwidth(bmat), bandwidth(jumps) if len(jumps) else 0, bandwidth(r))
    return _em_numba(
        phi,
        np.ascontiguousarray(bmat, dtype=np.complex128),
        bands[0],
        jumps,
        bands[1],
        np.ascontiguousarray(r, dtype=np.complex128),
        bands[2],
        np.ascontiguousarray(c1, dtype=np.float64),
        np.ascontiguousarray(c2, dtype=np.float64),
        np.ascontiguousarray(c3, dtype=np.float64),
        float(dt),
        *_csr_parts(derivative),
        *_csr_parts(drift),
        has_grid,
    )
