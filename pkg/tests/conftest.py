import numpy as np
import pytest

from qfilter.generator import SignalModel, SystemModel
from qfilter.noise import NoiseSpec
from qfilter.operators import build_oscillator, pauli


def random_hermitian(rng, d, scale=1.0):
    x = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return scale * 0.5 * (x + x.conj().T)


def random_density(rng, d):
    x = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    rho = x @ x.conj().T
    return rho / np.trace(rho).real


def random_positive(rng, m, floor=0.2):
    x = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    return x @ x.conj().T + floor * np.eye(m)


def qubit_model(kappa=1.0, l_scale=0.7, z_scale=0.3, h_scale=0.5):
    s = pauli()
    return SystemModel(
        1.0, h_scale * s["z"], [l_scale * s["minus"] + z_scale * s["z"]], NoiseSpec.scalar(kappa)
    )


def oscillator_model(dim=8, points=33, f="identity", upsilon=0.5, sigma=0.5, half_width=3.2):
    osc = build_oscillator(dim, hbar=2.0, omega=1.0)
    signal = SignalModel(upsilon, sigma, -half_width, half_width, points, f)
    return SystemModel(2.0, osc.H, [0.5 * osc.Q], NoiseSpec.scalar(1.0), Q=osc.Q, signal=signal), osc


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def qubit():
    return qubit_model()


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    def order(key):
        head = key.split()[0]
        return (int(head), key)
    for key in sorted(results, key=order):
        terminalreporter.write_line(results[key])
