"""Shared builders for test systems."""

import numpy as np

from stochrom import BilinearSdeSystem, ConstantControl, ZeroControl


def random_stable_system(state_dim, input_dim=1, noise_dim=2, seed=0,
                         drift_scale=0.4, bilinear_scale=0.2, noise_scale=0.4,
                         initial_mean=None):
    """A generic well-behaved bilinear system with deterministic start."""
    rng = np.random.default_rng(seed)
    n = state_dim
    a = rng.standard_normal((n, n)) * drift_scale - 0.8 * np.eye(n)
    b = rng.standard_normal((n, input_dim))
    bilinear = tuple(
        rng.standard_normal((n, n)) * bilinear_scale for _ in range(input_dim)
    )
    m = rng.standard_normal((n, noise_dim)) * noise_scale
    if initial_mean is None:
        initial_mean = rng.standard_normal(n)
    return BilinearSdeSystem(
        drift_linear=a,
        drift_input=b,
        drift_bilinear=bilinear,
        diffusion=m,
        noise_correlation=np.eye(noise_dim),
        initial_mean=initial_mean,
        initial_covariance=np.zeros((n, n)),
    )


def scalar_system(rate=-1.0, noise=1.0, x0=1.0, input_gain=0.0):
    return BilinearSdeSystem(
        drift_linear=[[rate]],
        drift_input=[[input_gain]],
        drift_bilinear=(np.zeros((1, 1)),),
        diffusion=[[noise]],
        noise_correlation=np.eye(1),
        initial_mean=[x0],
        initial_covariance=np.zeros((1, 1)),
    )


def recovery_benchmark_runs():
    """The 5-dim system and training controls used by the exact-regime tests.

    Constant and zero controls keep control derivatives out of the finite
    difference truncation error; the distinct initial means make the joint
    drift data full rank.
    """
    system = random_stable_system(5, seed=7)
    controls = [
        ConstantControl([0.8]),
        ConstantControl([-0.6]),
        ConstantControl([0.3]),
        ZeroControl(1),
    ]
    means = [np.random.default_rng(100 + i).standard_normal(5) for i in range(4)]
    return system, controls, means
