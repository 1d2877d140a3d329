import numpy as np
import pytest

from qfilter import filters
from qfilter.filters import (
    DegenerateTrajectoryError,
    FilterBlowUpError,
    FilterRun,
    TrajectoryRecord,
    beta_step_function,
    linear_step_batch,
    mgf_check,
    normalized_step_batch,
    posterior_mean,
    rk4_generator,
    signal_observable,
    step_linear,
    step_normalized,
)
from qfilter.generator import FieldState, SystemModel
from qfilter.noise import NoiseSpec
from qfilter.operators import pauli, trace_norm
from qfilter.rng import batch_increments

from conftest import oscillator_model, qubit_model, random_density


def _field(model, rho):
    return FieldState.product(model, rho)


def test_run_validation(qubit):
    field = _field(qubit, np.eye(2) / 2)
    with pytest.raises(ValueError):
        FilterRun(qubit, 0.0, 1.0, field)
    with pytest.raises(ValueError):
        FilterRun(qubit, 0.1, 0.05, field)
    with pytest.raises(ValueError):
        FilterRun(qubit, 0.1, 1.0, field, mode="smoothing")
    run = FilterRun(qubit, 0.1, 1.0, field)
    with pytest.raises(ValueError):
        step_normalized(run, 0.0)
    with pytest.raises(ValueError):
        linear_step_batch(qubit, field.phi[None], np.zeros((1, 1)), 0.1, scheme="rk4")


def test_trajectory_record_lengths():
    TrajectoryRecord(np.arange(4) * 0.1, np.zeros(3), np.zeros(3), np.zeros(3), seed=1, index=0)
    with pytest.raises(ValueError):
        TrajectoryRecord(np.arange(4) * 0.1, np.zeros(2), np.zeros(3), np.zeros(3))


def test_unitary_limit_trace_drift():
    s = pauli()
    model = SystemModel(1.0, s["x"], [np.zeros((2, 2))], NoiseSpec.scalar(1.0))
    rho = np.array([[0.8, 0.1], [0.1, 0.2]], dtype=complex)
    for dt in (1e-2, 5e-3):
        out = linear_step_batch(model, rho[None, None], np.zeros((1, 1)), dt)[0, 0]
        assert abs(np.trace(out).real - 1.0) < 1e-14
        exact_rot = rho - 1j * dt * (s["x"] @ rho - rho @ s["x"])
        assert np.abs(out - exact_rot).max() < 1e-15


def test_normalized_keeps_unit_weight_and_identity_mean(qubit, rng):
    run = FilterRun(qubit, 0.01, 0.2, _field(qubit, random_density(rng, 2)), mode="normalized")
    for _ in range(20):
        step_normalized(run, rng.standard_normal() * 0.1)
        assert run.state.weight == pytest.approx(1.0, abs=1e-14)
        assert posterior_mean(run, np.eye(2)) == pytest.approx(1.0, abs=1e-14)
    assert len(run.weight_history) == 20


def test_posterior_mean_scalar_weight():
    state = FieldState(np.array([[[0.3]]]), np.array([1.0]))
    state.phi[0, 0, 0] = 0.5
    assert posterior_mean(state, np.array([[0.6]])) == pytest.approx(0.6)
    with pytest.raises(ValueError):
        posterior_mean(FieldState(np.zeros((1, 1, 1)), np.ones(1)), np.eye(1))
    with pytest.raises(ValueError):
        posterior_mean(FieldState(np.array([[[0.5, 0.25], [0.25, 0.5]]]), np.ones(1)), np.array([[0, 1j], [1j, 0]]))


def test_signal_mean_matches_posterior_mean():
    model, osc = oscillator_model(dim=6, points=33)
    field = FieldState.product(model, osc.coherent_density(), model.signal.gaussian_density(0.4, 0.2))
    x = signal_observable(model)
    assert posterior_mean(field, x) == pytest.approx(0.4, abs=2e-3)
    assert filters.signal_means(model, field.phi[None])[0] == pytest.approx(posterior_mean(field, x))


def test_linear_log_rescaling(qubit):
    run = FilterRun(qubit, 0.01, 1.0, _field(qubit, np.eye(2) / 2))
    run.state = FieldState(run.state.phi * np.exp(250.0), run.state.weights)
    run._rescale()
    assert run.state.weight == pytest.approx(1.0)
    assert np.log(run.weight) == pytest.approx(250.0)


def test_degenerate_and_blow_up(qubit):
    rho = np.eye(2)[None, None] / 2
    with pytest.raises(DegenerateTrajectoryError):
        normalized_step_batch(qubit, 0 * rho, np.array([[0.1]]), 0.01)
    strong = qubit_model(l_scale=30.0)
    with pytest.raises((DegenerateTrajectoryError, FilterBlowUpError)):
        state = rho.astype(complex)
        for k in range(200):
            state = normalized_step_batch(strong, state, np.array([[(-1) ** k * 3.0]]), 0.5)
    with pytest.raises(FilterBlowUpError):
        linear_step_batch(qubit, rho, np.array([[np.inf]]), 0.01)


def _gauss_mean_gap(model, rho, dt, gain):
    """E over dv ~ N(0, C dt) of normalise(linear step) minus normalised step."""
    nodes, weights = np.polynomial.hermite_e.hermegauss(24)
    weights = weights / weights.sum()
    c = model.noise.input_cov[0, 0]
    dv = (np.sqrt(c * dt) * nodes)[:, None]
    phi = np.repeat(rho[None, None], len(nodes), axis=0)
    lin = linear_step_batch(model, phi, dv, dt)
    lin = lin / filters.batch_weights(lin, model.signal.weights)[:, None, None, None]
    de = model.noise.output_from_input(dv)
    nrm = normalized_step_batch(model, phi, de, dt, gain=gain)
    return np.abs(np.einsum("k,kgab->gab", weights, lin - nrm)).max()


@pytest.mark.parametrize("kappa", [1.0, 2.5])
def test_normalized_drift_cross_derived_from_linear(kappa, rng):
    """The Ito drift of the normalised linear solution equals the normalised step's drift."""
    model = qubit_model(kappa=kappa)
    rho = random_density(rng, 2)
    gaps = [_gauss_mean_gap(model, rho, dt, "derived") for dt in (1e-2, 5e-3, 2.5e-3)]
    order = np.log2(gaps[0] / gaps[1]), np.log2(gaps[1] / gaps[2])
    assert min(order) > 1.8


def test_printed_gain_differs_off_unit_intensity(rng):
    rho = random_density(rng, 2)
    unit = qubit_model(kappa=1.0)
    assert np.allclose(filters.normalized_gain(unit, "printed"), filters.normalized_gain(unit, "derived"))
    model = qubit_model(kappa=2.5)
    gaps = [_gauss_mean_gap(model, rho, dt, "printed") for dt in (1e-2, 5e-3)]
    # the wrong drift leaves an O(dt) mean error: halving dt only halves the gap
    assert np.log2(gaps[0] / gaps[1]) < 1.2


def test_milstein_reduces_pathwise_gap(qubit):
    dt = 0.01
    inc = batch_increments(qubit.noise, dt, 100, seed=3, indices=range(8))[:, :, :1]
    rho0 = np.array([[0.5, 0.5], [0.5, 0.5]], dtype=complex)
    gaps = {}
    for scheme in filters.SCHEMES:
        lin = np.repeat(rho0[None, None], 8, axis=0)
        nrm = lin.copy()
        gap = 0.0
        for k in range(100):
            lin = linear_step_batch(qubit, lin, inc[:, k], dt, scheme)
            nrm = normalized_step_batch(qubit, nrm, qubit.noise.output_from_input(inc[:, k]), dt, scheme=scheme)
            p = filters.batch_weights(lin, qubit.signal.weights)
            gap = max(gap, max(trace_norm(a[0] / pa - b[0]) for a, pa, b in zip(lin, p, nrm)))
        gaps[scheme] = gap
    assert gaps["milstein"] < gaps["euler"]


def test_linear_martingale_small_ensemble(qubit):
    dt, steps, n = 0.02, 25, 2000
    inc = batch_increments(qubit.noise, dt, steps, seed=11, indices=range(n))
    phi = np.repeat(np.eye(2, dtype=complex)[None, None] / 2, n, axis=0)
    for k in range(steps):
        phi = linear_step_batch(qubit, phi, inc[:, k, :1], dt)
    p = filters.batch_weights(phi, qubit.signal.weights)
    assert abs(p.mean() - 1.0) < 3 * p.std(ddof=1) / np.sqrt(n)


def test_rk4_generator_preserves_trace(qubit, rng):
    rho = random_density(rng, 2)[None]
    out = rk4_generator(qubit, rho, 1.0, 0.01)
    assert np.trace(out[0]).real == pytest.approx(1.0, abs=1e-12)


def test_beta_step_function():
    beta = beta_step_function([0.0, 0.5], [1.0, -2.0])
    assert beta(0.0)[0] == 1.0
    assert beta(0.4999)[0] == 1.0
    assert beta(0.5)[0] == -2.0
    assert beta(3.0)[0] == -2.0
    with pytest.raises(ValueError):
        beta_step_function([0.0, 0.5], [1.0])


def test_mgf_needs_enough_trajectories(qubit):
    with pytest.raises(ValueError):
        mgf_check(qubit, np.eye(2), beta_step_function([0.0], [0.0]), 50, 0.1, 0.01, np.eye(2) / 2)


def test_mgf_short_horizon_reduces_to_pairing(qubit):
    x = pauli()["z"]
    rho0 = np.diag([0.7, 0.3]).astype(complex)
    res = mgf_check(qubit, x, beta_step_function([0.0], [0.5]), 200, 0.001, 0.001, rho0)
    assert res.ode_solution == pytest.approx(0.4, abs=5e-3)
    assert res.mc_estimate == pytest.approx(0.4, abs=5e-2)
