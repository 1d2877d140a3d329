import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qfilter.operators import (
    DimensionError,
    SingularSolveError,
    as_operator,
    build_oscillator,
    check_density,
    commutator,
    expm_antihermitian,
    herm_sqrt,
    is_hermitian,
    jordan_solve,
    ladder,
    leakage,
    pauli,
    trace_norm,
)

from conftest import random_density, random_hermitian


def test_as_operator_rejects_non_square():
    with pytest.raises(DimensionError):
        as_operator(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        as_operator(np.array([[np.nan]]))


def test_commutator_dimension_mismatch():
    with pytest.raises(DimensionError):
        commutator(np.eye(2), np.eye(3))


def test_canonical_commutator_below_cutoff():
    osc = build_oscillator(12, hbar=2.0, omega=1.5)
    c = commutator(osc.Q, osc.P)
    # the truncation only spoils the last level
    assert np.allclose(c[:-1, :-1], 1j * 2.0 * np.eye(11), atol=1e-12)


def test_oscillator_spectrum_and_quadratures():
    osc = build_oscillator(10, hbar=2.0, omega=1.3)
    assert np.allclose(np.diag(osc.H).real, 2.0 * 1.3 * np.arange(10))
    assert np.allclose(osc.A, np.sqrt(2 * 2.0 * 1.3) * osc.a)
    vac = osc.coherent_density()
    assert np.trace(vac @ osc.Q @ osc.Q).real == pytest.approx(2.0 / (2 * 1.3))


def test_coherent_state_means():
    osc = build_oscillator(40, hbar=1.0, omega=2.0)
    rho = osc.coherent_density(0.4, -0.3)
    assert np.trace(rho @ osc.Q).real == pytest.approx(0.4, abs=1e-10)
    assert np.trace(rho @ osc.P).real == pytest.approx(-0.3, abs=1e-10)


def test_ladder_validation():
    with pytest.raises(DimensionError):
        ladder(1)


def test_pauli_lowering_convention():
    s = pauli()
    excited = np.array([1, 0], dtype=complex)
    assert np.allclose(s["minus"] @ excited, [0, 1])
    assert np.allclose(commutator(s["x"], s["y"]), 2j * s["z"])


@settings(max_examples=40, deadline=None)
@given(d=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_jordan_solve_matches_definition(d, seed):
    rng = np.random.default_rng(seed)
    p = random_density(rng, d) + 0.05 * np.eye(d)
    c = random_hermitian(rng, d)
    x = jordan_solve(p, c)
    assert is_hermitian(x)
    assert np.allclose(x @ p + p @ x, 2 * c, atol=1e-9 * max(1.0, np.abs(c).max() / 0.05))


def test_jordan_solve_scalar_and_singular():
    assert jordan_solve(0.5, 0.3) == pytest.approx(0.6)
    with pytest.raises(SingularSolveError):
        jordan_solve(np.diag([1.0, 0.0]), np.eye(2))
    with pytest.raises(DimensionError):
        jordan_solve(np.eye(2), np.eye(3))


def test_herm_sqrt_and_unitary_exponential(rng):
    a = random_density(rng, 4)
    s = herm_sqrt(a)
    assert np.allclose(s @ s, a, atol=1e-12)
    u = expm_antihermitian(1j * random_hermitian(rng, 4))
    assert np.allclose(u.conj().T @ u, np.eye(4), atol=1e-12)


def test_trace_norm_and_density_checks(rng):
    h = random_hermitian(rng, 3)
    assert trace_norm(h) == pytest.approx(np.abs(np.linalg.eigvalsh(h)).sum())
    check_density(random_density(rng, 3))
    with pytest.raises(ValueError):
        check_density(np.diag([1.5, -0.5]))
    with pytest.raises(ValueError):
        check_density(np.diag([0.5, 0.2]))


def test_leakage_reads_top_levels():
    rho = np.diag([0.7, 0.2, 0.06, 0.04])
    assert leakage(rho) == pytest.approx(0.1)
    assert leakage(rho, levels=1) == pytest.approx(0.04)
