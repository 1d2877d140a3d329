"""Continuous quantum measurement and filtering of a diffusive classical signal."""
from .generator import FieldState, SignalModel, SystemModel, apply_generator, apply_heisenberg
from .kalman import KalmanParams, KalmanState, kalman_step, riccati_rhs, stationary_riccati
from .noise import ItoTable, NoiseSpec, geometric_mean, standard_theta
from .operators import build_oscillator, commutator, jordan_solve, pauli

__all__ = [
    "FieldState",
    "ItoTable",
    "KalmanParams",
    "KalmanState",
    "NoiseSpec",
    "SignalModel",
    "SystemModel",
    "apply_generator",
    "apply_heisenberg",
    "build_oscillator",
    "commutator",
    "geometric_mean",
    "jordan_solve",
    "kalman_step",
    "pauli",
    "riccati_rhs",
    "standard_theta",
    "stationary_riccati",
]
