import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qfilter.noise import (
    DomainError,
    ItoTable,
    NoiseModelError,
    NoiseSpec,
    UnknownIncrementError,
    geometric_mean,
    sample_increments,
    standard_theta,
)
from qfilter.rng import batch_increments, check_seed, trajectory_increments, trajectory_stream

from conftest import random_positive


@settings(max_examples=30, deadline=None)
@given(m=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_geometric_mean_identity(m, seed):
    kappa = random_positive(np.random.default_rng(seed), m)
    g = geometric_mean(kappa)
    assert np.abs(g @ np.linalg.inv(kappa) @ g - kappa.T).max() <= 1e-10 * max(1, np.abs(kappa).max())
    eig = np.linalg.eigvalsh(0.5 * (g + g.conj().T))
    assert eig.min() > 0


def test_geometric_mean_scalar_and_real_symmetric():
    assert geometric_mean(np.array([[4.0]])) == pytest.approx(4.0)
    k = np.array([[2.0, 0.5], [0.5, 1.0]])
    assert np.allclose(geometric_mean(k), k)


def test_theta_relation():
    k = np.array([[2.0, 0.3 + 0.4j], [0.3 - 0.4j, 1.0]])
    t = standard_theta(k)
    assert np.allclose(t, t.T) and np.isrealobj(t)
    assert np.allclose(t @ np.linalg.inv(k) @ t.T, k.conj(), atol=1e-12)


def test_domain_errors():
    with pytest.raises(DomainError):
        geometric_mean(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(DomainError):
        geometric_mean(np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_observed_block_must_be_real():
    k = np.array([[1.0, 0.3j], [-0.3j, 1.0]])
    with pytest.raises(NoiseModelError):
        NoiseSpec(k, 2)
    spec = NoiseSpec(k, 1)  # one observed channel is always a classical record
    assert spec.output_cov.shape == (1, 1)


def test_input_output_duality():
    spec = NoiseSpec(np.array([[2.0, 0.5], [0.5, 1.0]]), 2)
    assert np.allclose(spec.input_cov @ spec.output_cov, np.eye(2))
    dv = np.array([0.1, -0.2])
    assert np.allclose(spec.input_from_output(spec.output_from_input(dv)), dv)
    assert max(spec.residuals().values()) < 1e-12


def test_ito_table_entries():
    spec = NoiseSpec(np.array([[2.0, 0.5], [0.5, 1.0]]), 2)
    table = ItoTable(spec, hbar=2.0, sigma=0.5)
    assert table.product("dv1", "de1") == 1
    assert table.product("dv1", "de2") == 0
    assert table.product("de1", "de2") == pytest.approx(0.5)
    assert table.product("dtheta", "dtheta") == pytest.approx(0.25)
    assert table.product("dw", "dtheta") == pytest.approx(0.5)
    assert table.product("de1", "df1") == pytest.approx(2j)
    assert table.product("dv1", "dw") == 0
    assert "df2" in table.labels()
    with pytest.raises(UnknownIncrementError):
        table.product("dv3", "dv1")
    with pytest.raises(UnknownIncrementError):
        table.product("dz1", "dv1")


def test_sampling_rejects_bad_dt():
    with pytest.raises(ValueError):
        sample_increments(NoiseSpec.scalar(1.0), 0.0, np.random.default_rng(0))


def test_streams_are_reproducible_and_independent():
    spec = NoiseSpec.scalar(1.5)
    a = trajectory_increments(spec, 0.01, 50, seed=7, index=3)
    b = trajectory_increments(spec, 0.01, 50, seed=7, index=3)
    c = trajectory_increments(spec, 0.01, 50, seed=7, index=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    batch = batch_increments(spec, 0.01, 50, seed=7, indices=[4, 3])
    assert np.array_equal(batch[1], a) and np.array_equal(batch[0], c)
    s0 = trajectory_stream(7, 3, purpose=0).standard_normal()
    s1 = trajectory_stream(7, 3, purpose=1).standard_normal()
    assert s0 != s1


def test_seed_range():
    assert check_seed(2**64 - 1) == 2**64 - 1
    with pytest.raises(ValueError):
        check_seed(-1)
