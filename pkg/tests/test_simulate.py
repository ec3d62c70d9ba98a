import numpy as np
import pytest
from scipy import stats

from callhawkes.core import CovariateSeries, ModelVariant, RecorderArray, TimeGrid, ValidationError
from callhawkes.diagnostics import rtct_transform
from callhawkes.intensity import HawkesModel
from callhawkes.simulate import (
    SupercriticalError,
    branching_ratios,
    calibrate_intercepts,
    ccb_array,
    draw_gp,
    expected_total_count,
    gp_correlation,
    study_params,
    simulate_dataset,
    simulate_hawkes,
    simulate_nhpp,
    simulate_offspring,
)
from conftest import random_params


def test_gp_correlation_definition():
    C = gp_correlation(np.array([0.0, 180.0, 360.0]))
    assert C[0, 0] == 1.0
    assert C[0, 1] == pytest.approx(np.exp(-3.0))
    assert C[0, 1] == pytest.approx(0.0498, abs=5e-5)


def test_gp_marginal_moments():
    grid = TimeGrid.from_spacing(400.0, 20.0)
    rng = np.random.default_rng(1)
    from callhawkes.simulate import gp_cholesky

    L = gp_cholesky(grid)
    draws = np.array([draw_gp(grid, rng=rng, chol=L)[7] for _ in range(10_000)])
    assert abs(draws.mean()) < 0.05
    assert 0.95 < draws.var() < 1.05


def test_nhpp_zero_rate_is_empty():
    assert simulate_nhpp(lambda t: np.zeros_like(t), 0.0, 0.0, 10.0, np.random.default_rng(0)).size == 0


def test_nhpp_constant_rate_count():
    rng = np.random.default_rng(2)
    c, a, b = 0.7, 2.0, 52.0
    counts = np.array([simulate_nhpp(lambda t: np.full_like(t, c), c, a, b, rng).size for _ in range(1000)])
    sigma = np.sqrt(c * (b - a) / 1000)
    assert abs(counts.mean() - c * (b - a)) < 3 * sigma


def test_nhpp_rescaled_gaps_are_exponential():
    rng = np.random.default_rng(3)
    rate = lambda t: 1.0 + np.sin(t / 5.0) ** 2
    cum = lambda t: t + t / 2 - 5.0 * np.sin(2 * t / 5.0) / 4
    gaps = []
    for _ in range(200):
        ev = simulate_nhpp(rate, 2.0, 0.0, 30.0, rng)
        gaps.append(np.diff(cum(ev), prepend=0.0))
    assert stats.kstest(np.concatenate(gaps), "expon").pvalue > 0.01


def test_nhpp_bound_violation_raises():
    with pytest.raises(ValidationError, match="bound"):
        simulate_nhpp(lambda t: np.full_like(t, 5.0), 1.0, 0.0, 100.0, np.random.default_rng(0))


def test_offspring_mean_matches_branching_ratio():
    arr = ccb_array()
    rng = np.random.default_rng(4)
    grid = TimeGrid.from_spacing(7200.0)
    p = study_params(arr, grid, "nhpp-cc", rng)
    ratios = branching_ratios(p, arr)
    n_par = 4000
    parents_t = np.full(n_par, 10.0)
    parents_m = np.repeat(np.arange(10), n_par // 10)
    kids_t, kids_m, kids_p = simulate_offspring(parents_t, parents_m, p, arr, 7200.0, rng)
    per_source = np.bincount(parents_m[kids_p], minlength=10) / (n_par // 10)
    expected = ratios
    sigma = np.sqrt(expected / (n_par // 10))
    assert np.all(np.abs(per_source - expected) < 3 * sigma + 1e-12)
    assert np.all(kids_t > 10.0)


def test_zero_alpha_equals_background_only():
    arr = ccb_array()
    grid = TimeGrid.from_spacing(1440.0)
    cov = CovariateSeries.zeros(10)
    p = study_params(arr, grid, "nhpp-cc", np.random.default_rng(5), alpha=np.zeros(10))
    p.beta[0] = -3.0
    seq_a, z = simulate_hawkes(p, arr, cov, grid, "nhpp-cc", np.random.default_rng(6))
    assert np.all(z == 0)
    bg = p.copy()
    bg.alpha = bg.eta = bg.phi = None
    seq_b, _ = simulate_hawkes(bg, arr, cov, grid, "nhpp", np.random.default_rng(6))
    assert seq_a == seq_b


def test_supercritical_refused():
    arr = ccb_array()
    grid = TimeGrid.from_spacing(600.0)
    p = study_params(arr, grid, "nhpp-cc", np.random.default_rng(0), alpha=np.full(10, 0.5))
    assert branching_ratios(p, arr).max() > 1
    with pytest.raises(SupercriticalError):
        simulate_hawkes(p, arr, CovariateSeries.zeros(10), grid, "nhpp-cc", np.random.default_rng(0))
    with pytest.raises(SupercriticalError):
        simulate_dataset("nhpp-cc", arr, 600.0, seed=1, alpha=np.full(10, 0.5))


def test_branching_labels_point_backwards():
    params, cov, grid, data, z = simulate_dataset("nhpp-cc", ccb_array(), 1440.0, seed=7, target_count=500)
    idx = np.arange(data.n)
    kids = z > 0
    assert np.all(z[kids] - 1 < idx[kids])
    assert kids.sum() > 0


def test_calibration_hits_target():
    arr = ccb_array()
    grid = TimeGrid.from_spacing(2880.0)
    cov = CovariateSeries.zeros(10)
    p = study_params(arr, grid, "nhpp-gp-cc", np.random.default_rng(8))
    p = calibrate_intercepts(p, arr, cov, grid, 1000.0)
    assert expected_total_count(p, arr, cov, grid) == pytest.approx(1000.0, rel=1e-6)


def test_simulation_is_reproducible():
    a = simulate_dataset("nhpp-gp-cc", ccb_array(), 1440.0, seed=9, target_count=400)
    b = simulate_dataset("nhpp-gp-cc", ccb_array(), 1440.0, seed=9, target_count=400)
    assert a[3] == b[3]
    assert np.array_equal(a[4], b[4])


def test_count_consistent_with_compensator():
    params, cov, grid, data, z = simulate_dataset("nhpp-gp-cc", ccb_array(), 7200.0, seed=10)
    model = HawkesModel(data, ccb_array(), cov, grid)
    lam_T = model.compensator_at_events(params)[-1]
    assert abs(data.n - lam_T) < 3 * np.sqrt(lam_T)
    assert 1500 < data.n < 4500


def test_rtct_under_truth_is_exponential(tri_array):
    gaps = []
    for seed in range(4):
        params, cov, grid, data, z = simulate_dataset("nhpp-gp-cc", tri_array, 2880.0, seed=100 + seed,
                                                      target_count=500, alpha=[0.1, 0.08, 0.05], eta=0.3, phi=0.4)
        gaps.append(rtct_transform(HawkesModel(data, tri_array, cov, grid), params))
    assert stats.kstest(np.concatenate(gaps), "expon").pvalue > 0.01
