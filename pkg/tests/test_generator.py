import numpy as np
import pytest

from qfilter.generator import (
    FieldState,
    GridError,
    SignalModel,
    SystemModel,
    apply_generator,
    apply_heisenberg,
    delta,
    delta2,
    derivative_matrix,
    laplacian_matrix,
    lindblad,
    pairing,
    total_weight,
)
from qfilter.noise import NoiseSpec
from qfilter.operators import build_oscillator

from conftest import oscillator_model, qubit_model, random_density, random_hermitian, random_positive


def random_field(rng, points, d):
    return np.array([random_hermitian(rng, d) for _ in range(points)])


def test_signal_model_validation():
    with pytest.raises(GridError):
        SignalModel(0.5, 0.5, 0.0, 1.0, 2)
    with pytest.raises(GridError):
        SignalModel(0.5, 0.5, 1.0, 1.0, 9)
    s = SignalModel(0.5, 0.5, -1.0, 1.0, 5)
    assert s.weights.sum() == pytest.approx(2.0)
    assert np.allclose(s.upsilon_values, 0.5 * s.theta)


def test_duality_with_signal(rng):
    model, _ = oscillator_model(dim=6, points=64)
    w = model.signal.weights
    for _ in range(5):
        x = random_field(rng, 64, 6)
        phi = random_field(rng, 64, 6)
        lhs = pairing(apply_heisenberg(model, x), phi, w)
        rhs = pairing(x, apply_generator(model, phi), w)
        assert abs(lhs - rhs) <= 1e-8 * max(1.0, abs(lhs))


def test_heisenberg_of_identity_vanishes():
    model, _ = oscillator_model(dim=6, points=33)
    ident = np.broadcast_to(np.eye(6, dtype=complex), (33, 6, 6)).copy()
    assert np.abs(apply_heisenberg(model, ident)).max() < 1e-12


def test_generator_conserves_weight(rng):
    model, osc = oscillator_model(dim=6, points=33)
    field = FieldState.product(model, random_density(rng, 6), model.signal.gaussian_density(0.3, 0.4))
    out = apply_generator(model, field)
    assert abs(total_weight(out.phi, out.weights)) < 1e-12
    assert field.weight == pytest.approx(1.0)


def test_lindblad_is_traceless_multichannel(rng):
    s = qubit_model()
    kappa = random_positive(rng, 3)
    ls = [random_hermitian(rng, 3) + 1j * random_hermitian(rng, 3) for _ in range(3)]
    model = SystemModel(1.0, np.eye(3), ls, NoiseSpec(kappa, 1))
    phi = random_hermitian(rng, 3)
    assert abs(np.trace(lindblad(model, phi))) <= 1e-12 * np.linalg.norm(phi)
    assert s.dim == 2


def test_generator_without_signal_is_master_equation(rng):
    model = qubit_model()
    rho = random_density(rng, 2)[None]
    l = model.L[0]
    ref = 1j * (rho[0] @ model.H - model.H @ rho[0]) + (
        l @ rho[0] @ l.conj().T - 0.5 * (l.conj().T @ l @ rho[0] + rho[0] @ l.conj().T @ l)
    )
    assert np.allclose(apply_generator(model, rho)[0], ref, atol=1e-13)


def test_delta_requires_grid(qubit):
    with pytest.raises(GridError):
        delta(qubit, np.zeros((1, 2, 2)))
    with pytest.raises(GridError):
        delta2(qubit, np.zeros((1, 2, 2)))


def _smooth_field(theta, a, b):
    g = np.exp(-0.5 * theta**2)
    return g[:, None, None] * a[None] + (theta * g)[:, None, None] * b[None]


def _convergence_orders(rng, which):
    osc = build_oscillator(4, hbar=1.0, omega=1.0)
    a = random_hermitian(rng, 4)
    b = random_hermitian(rng, 4)
    r = 1j * osc.Q
    errors = []
    for points in (33, 65, 129, 257):
        signal = SignalModel(0.0, 0.0, -3.0, 3.0, points, "identity")
        model = SystemModel(1.0, osc.H, [osc.a], NoiseSpec.scalar(1.0), Q=osc.Q, signal=signal)
        th = signal.theta
        g = np.exp(-0.5 * th**2)
        phi = _smooth_field(th, a, b)
        d1 = ((-th * g)[:, None, None] * a + ((1 - th**2) * g)[:, None, None] * b)
        if which == 1:
            exact = d1 + (phi @ r - r @ phi)
            approx = delta(model, phi)
        else:
            d2 = ((th**2 - 1) * g)[:, None, None] * a + ((th**3 - 3 * th) * g)[:, None, None] * b
            c = phi @ r - r @ phi
            exact = d2 + 2 * (d1 @ r - r @ d1) + (c @ r - r @ c)
            approx = delta2(model, phi)
        errors.append(np.abs(approx - exact).max())
    errors = np.array(errors)
    return np.log2(errors[:-1] / errors[1:])


def test_delta_grid_convergence(rng):
    assert _convergence_orders(rng, 1).min() >= 1.9


def test_delta2_grid_convergence(rng):
    assert _convergence_orders(rng, 2).min() >= 1.9


def test_stencils_exact_on_quadratics():
    th = np.linspace(-1, 2, 11)
    h = th[1] - th[0]
    y = 3 * th**2 - th + 1
    assert np.allclose(derivative_matrix(11, h) @ y, 6 * th - 1)
    assert np.allclose(laplacian_matrix(11, h) @ y, 6.0)
    assert np.allclose(laplacian_matrix(3, 0.5) @ np.array([0.0, 0.25, 1.0]), 2.0)


def test_grid_generator_matches_covariant_composition(rng):
    """Lambda = delta(u phi) + (i/hbar)[phi, H] + (sigma^2 delta^2 phi + Lambda_1) / 2 up to O(h^2)."""
    osc = build_oscillator(4, hbar=2.0, omega=1.0)
    a, b = random_hermitian(rng, 4), random_hermitian(rng, 4)
    errors = []
    for points in (65, 129, 257):
        signal = SignalModel(0.5, 0.7, -7.0, 7.0, points, "identity")
        model = SystemModel(2.0, osc.H, [0.5 * osc.Q], NoiseSpec.scalar(1.0), Q=osc.Q, signal=signal)
        th = signal.theta[:, None, None]
        g = np.exp(-0.5 * th**2)
        phi = g * a + th * g * b
        u = signal.upsilon_values[:, None, None]
        ref = (
            delta(model, u * phi)
            + (1j / 2.0) * (phi @ osc.H - osc.H @ phi)
            + 0.5 * (0.7**2 * delta2(model, phi) + lindblad(model, phi))
        )
        errors.append(np.abs(apply_generator(model, phi) - ref).max())
    assert errors[-1] < 1e-2
    assert np.log2(errors[0] / errors[1]) > 1.8 and np.log2(errors[1] / errors[2]) > 1.8
