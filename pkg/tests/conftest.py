import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from callhawkes.core import CovariateSeries, ModelParams, ModelVariant, RecorderArray, TimeGrid, N_COEF
from callhawkes.intensity import HawkesModel
from callhawkes.simulate import simulate_dataset

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=15, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tri_array():
    return RecorderArray.from_coords([[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]], ids=["A", "B", "C"])


def random_params(K, grid_size, variant, rng, alpha_scale=0.05):
    variant = ModelVariant(variant)
    beta = np.zeros((N_COEF, K))
    beta[0] = rng.normal(-3.0, 0.3, K)
    beta[1:] = rng.normal(0.0, 0.2, (N_COEF - 1, K))
    p = ModelParams(beta=beta, beta_tilde=beta.mean(axis=1), tau=np.ones(N_COEF))
    if variant.has_gp:
        p.delta = rng.uniform(0.3, 1.0, K)
        p.delta_tilde = 0.0
        p.tau_delta = 1.0
        p.w_grid = rng.normal(0.0, 1.0, grid_size)
    if variant.has_cc:
        p.alpha = rng.uniform(0.0, alpha_scale, K)
        p.eta = float(rng.uniform(0.2, 1.0))
        p.phi = float(rng.uniform(0.2, 1.0)) if K > 1 else None
    return p


@pytest.fixture(scope="session")
def gpcc_small(tri_array):
    """A short NHPP+GP+CC realization on three recorders."""
    params, cov, grid, data, z = simulate_dataset("nhpp-gp-cc", tri_array, 1440.0, seed=11, target_count=300,
                                                  alpha=[0.08, 0.06, 0.05], eta=0.4, phi=0.7)
    return params, cov, grid, data, z, HawkesModel(data, tri_array, cov, grid)


def make_model(times, marks, array, horizon, spacing=20.0, cov=None):
    from callhawkes.core import validate_sequence

    data = validate_sequence(times, marks, horizon, array.K)
    grid = TimeGrid.from_spacing(horizon, spacing)
    cov = cov if cov is not None else CovariateSeries.zeros(array.K)
    return HawkesModel(data, array, cov, grid)
