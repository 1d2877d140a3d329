import numpy as np
import pytest
import scipy.linalg

from qfilter.kalman import (
    KalmanParams,
    KalmanState,
    RiccatiConvergenceError,
    covariance_path,
    kalman_step,
    riccati_rhs,
    run_kalman,
    stationary_prior,
    stationary_riccati,
)

EXAMPLE = KalmanParams(omega=1.0, upsilon=0.5, sigma=0.5, gamma=1.0, hbar=2.0)


def test_params_validation_and_back_action():
    assert EXAMPLE.sigma_gamma_sq == pytest.approx(1.0, abs=1e-14)
    assert KalmanParams(2.0, 0.1, 0.2, 0.5, 1.0).sigma_gamma_sq == pytest.approx(0.5, abs=1e-14)
    with pytest.raises(ValueError):
        KalmanParams(0.0, 0.5, 0.5, 1.0, 2.0)
    with pytest.raises(ValueError):
        KalmanParams(1.0, -0.5, 0.5, 1.0, 2.0)


def test_row_convention_mapping():
    assert np.allclose(EXAMPLE.row_drift, -EXAMPLE.drift.T)
    printed = KalmanParams(1.0, 0.5, 0.5, 1.0, 2.0, printed_drift=True)
    assert printed.drift[1, 2] == -EXAMPLE.drift[1, 2]


def test_state_validation():
    assert KalmanState(np.zeros(3), np.eye(3)).is_psd()
    with pytest.raises(ValueError):
        KalmanState(np.zeros(3), np.triu(np.ones((3, 3))))


def test_rhs_trivial_cases():
    quiet = KalmanParams(1.0, 0.5, 0.0, 1.0, 0.0)
    assert np.abs(riccati_rhs(np.zeros((3, 3)), quiet)).max() == 0.0
    assert np.allclose(riccati_rhs(np.zeros((3, 3)), EXAMPLE), EXAMPLE.process_noise)


def test_stationary_matches_algebraic_riccati():
    k_inf = stationary_riccati(EXAMPLE)
    assert np.abs(riccati_rhs(k_inf, EXAMPLE)).max() <= 1e-10
    h = np.array([[1.0, 0.0, 0.0]])
    are = scipy.linalg.solve_continuous_are(EXAMPLE.drift.T, h.T, EXAMPLE.process_noise, EXAMPLE.gamma)
    assert np.allclose(k_inf, are, atol=1e-9)
    assert np.linalg.eigvalsh(k_inf).min() >= -1e-10


def test_stationary_non_convergence():
    with pytest.raises(RiccatiConvergenceError):
        stationary_riccati(EXAMPLE, max_time=0.1)


def test_covariance_path_stays_psd_and_symmetric():
    covs = covariance_path(stationary_prior(EXAMPLE), 0.01, 500, EXAMPLE)
    assert np.abs(covs - np.swapaxes(covs, 1, 2)).max() <= 1e-12
    assert np.linalg.eigvalsh(covs).min() >= -1e-10


def test_zero_innovation_follows_drift():
    state = KalmanState(np.array([0.5, -0.2, 0.3]), stationary_prior(EXAMPLE))
    dt = 0.01
    new = kalman_step(state, state.mean[0] * dt, dt, EXAMPLE)
    assert np.allclose(new.mean, state.mean + EXAMPLE.drift @ state.mean * dt)
    with pytest.raises(ValueError):
        kalman_step(state, 0.0, 0.0, EXAMPLE)


def test_batch_matches_single_steps(rng):
    dt = 0.01
    dy = rng.standard_normal((2, 30)) * np.sqrt(dt)
    means, covs = run_kalman(EXAMPLE, dy, dt)
    state = KalmanState(np.zeros(3), stationary_prior(EXAMPLE))
    for i in range(30):
        state = kalman_step(state, dy[1, i], dt, EXAMPLE)
    assert np.allclose(means[1, -1], state.mean, atol=1e-13)
    assert np.allclose(covs[-1], state.cov, atol=1e-13)


def test_decoupled_signal_decays_at_drift_rate():
    params = KalmanParams(omega=50.0, upsilon=0.8, sigma=0.0, gamma=1.0, hbar=1.0)
    dt, steps = 1e-3, 1000
    state = KalmanState(np.array([0.0, 0.0, 1.0]), np.diag([0.01, 0.01, 0.0]))
    for _ in range(steps):
        state = kalman_step(state, state.mean[0] * dt, dt, params)
    assert state.mean[2] == pytest.approx(np.exp(-0.8), rel=1e-3)


def _simulate(params, n, steps, dt, rng):
    f = params.drift
    chol = np.linalg.cholesky(params.process_noise[1:, 1:])
    x = np.zeros((n, 3))
    x[:, 0] = rng.standard_normal(n) * np.sqrt(params.hbar / (2 * params.omega))
    x[:, 1] = rng.standard_normal(n) * np.sqrt(params.hbar * params.omega / 2)
    x[:, 2] = rng.standard_normal(n) * np.sqrt(params.sigma**2 / (2 * params.upsilon))
    dy = np.empty((n, steps))
    xs = np.empty((n, steps + 1, 3))
    xs[:, 0] = x
    for i in range(steps):
        dy[:, i] = x[:, 0] * dt + np.sqrt(params.gamma * dt) * rng.standard_normal(n)
        noise = np.zeros((n, 3))
        noise[:, 1:] = (rng.standard_normal((n, 2)) @ chol.T) * np.sqrt(dt)
        x = x + x @ f.T * dt + noise
        xs[:, i + 1] = x
    return xs, dy


def test_innovations_are_white(rng):
    dt, steps = 0.01, 4000
    xs, dy = _simulate(EXAMPLE, 1, steps, dt, rng)
    means, _ = run_kalman(EXAMPLE, dy, dt)
    innov = (dy[0] - means[0, :-1, 0] * dt) / np.sqrt(EXAMPLE.gamma * dt)
    for lag in (1, 2, 5, 10):
        r = np.mean(innov[:-lag] * innov[lag:])
        assert abs(r) < 3.0 / np.sqrt(steps - lag)


def test_mse_tracks_riccati_component(rng):
    dt, steps, n = 0.01, 300, 800
    xs, dy = _simulate(EXAMPLE, n, steps, dt, rng)
    means, covs = run_kalman(EXAMPLE, dy, dt)
    err2 = (means[:, :, 2] - xs[:, :, 2]) ** 2
    se = err2[:, -1].std(ddof=1) / np.sqrt(n)
    assert abs(err2[:, -1].mean() - covs[-1, 2, 2]) < 3 * se
