"""Synthetic data: GP paths, thinning for Poisson processes, Hawkes cascades."""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import brentq

from .core import (
    N_COEF,
    CovariateSeries,
    MarkedEventSequence,
    ModelParams,
    ModelVariant,
    RecorderArray,
    TimeGrid,
    ValidationError,
    jittered_cholesky,
    validate_sequence,
)
from .intensity import background_rate

GP_RANGE_MIN = 180.0
BOUND_SAFETY = 1.05

# Pairwise recorder distances (km) of the ten-recorder Cape Cod Bay array,
# upper triangle row by row.
_CCB_UPPER = [
    [7.6, 13.7, 16.3, 16.1, 10.3, 8.7, 8.3, 18.0, 15.2],
    [7.1, 13.1, 16.3, 14.7, 8.0, 15.8, 21.6, 21.4],
    [8.3, 14.3, 16.8, 8.4, 20.8, 21.8, 24.4],
    [7.2, 13.8, 7.6, 20.7, 15.9, 21.2],
    [9.1, 8.5, 17.4, 8.8, 15.4],
    [8.4, 8.5, 7.8, 7.7],
    [13.5, 14.0, 16.0],
    [15.0, 8.5],
    [8.9],
]


def ccb_distances() -> np.ndarray:
    K = len(_CCB_UPPER) + 1
    d = np.zeros((K, K))
    for i, row in enumerate(_CCB_UPPER):
        d[i, i + 1:] = row
    return d + d.T


def ccb_array() -> RecorderArray:
    return RecorderArray.from_distances(ccb_distances())


class SupercriticalError(ValidationError):
    pass


def gp_correlation(nodes: np.ndarray, effective_range: float = GP_RANGE_MIN) -> np.ndarray:
    """Exponential correlation that drops to exp(-3) at ``effective_range``."""
    lag = np.abs(nodes[:, None] - nodes[None, :])
    return np.exp(-3.0 * lag / effective_range)


def gp_cholesky(grid: TimeGrid, effective_range: float = GP_RANGE_MIN) -> np.ndarray:
    return jittered_cholesky(gp_correlation(grid.nodes, effective_range))


def draw_gp(grid: TimeGrid, effective_range: float = GP_RANGE_MIN, rng=None, chol=None) -> np.ndarray:
    """Unit-variance zero-mean GP draw at the grid nodes."""
    rng = np.random.default_rng(rng)
    if chol is None:
        chol = gp_cholesky(grid, effective_range)
    return chol @ rng.standard_normal(chol.shape[0])


def simulate_nhpp(rate_fn: Callable, rate_bound: float, a: float, b: float, rng=None) -> np.ndarray:
    """Lewis-Shedler thinning on ``(a, b]`` under the constant envelope ``rate_bound``."""
    rng = np.random.default_rng(rng)
    if rate_bound < 0 or not b > a:
        raise ValidationError("need rate_bound >= 0 and b > a")
    n_cand = rng.poisson(rate_bound * (b - a))
    if n_cand == 0:
        return np.empty(0)
    cand = np.sort(b - rng.random(n_cand) * (b - a))  # uniform on (a, b]
    rates = np.asarray(rate_fn(cand), dtype=float) * np.ones(n_cand)
    if np.any(rates > rate_bound * (1 + 1e-12)):
        raise ValidationError("thinning bound violated: rate exceeds rate_bound")
    keep = rng.random(n_cand) * rate_bound < rates
    return cand[keep]


def branching_matrix(params: ModelParams, array: RecorderArray) -> np.ndarray:
    """Expected direct offspring at recorder ``k`` of one event at ``l`` (infinite horizon)."""
    if not params.has_cc:
        return np.zeros((array.K, array.K))
    spatial = np.exp(-params.phi_or_zero * array.dist)
    return params.alpha[:, None] / params.eta * spatial


def branching_ratios(params: ModelParams, array: RecorderArray) -> np.ndarray:
    return branching_matrix(params, array).sum(axis=1)


def simulate_offspring(parent_times, parent_marks, params: ModelParams, array: RecorderArray,
                       horizon: float, rng=None, chunk: int = 200_000):
    """Direct offspring of each parent at every recorder by thinning.

    Candidates come from an HPP at ``alpha_l exp(-phi d_lk)`` on
    ``(t_parent, T]`` and are kept with probability ``exp(-eta (t - t_parent))``.
    Returns child times, child marks and the index of each child's parent.
    """
    rng = np.random.default_rng(rng)
    parent_times = np.asarray(parent_times, dtype=float)
    parent_marks = np.asarray(parent_marks, dtype=np.int64)
    K = array.K
    spatial = np.exp(-params.phi_or_zero * array.dist)
    # every (parent, recorder) combination
    p_idx = np.repeat(np.arange(parent_times.size), K)
    k_idx = np.tile(np.arange(K), parent_times.size)
    bound = params.alpha[parent_marks[p_idx]] * spatial[parent_marks[p_idx], k_idx]
    span = horizon - parent_times[p_idx]
    n_cand = rng.poisson(bound * span)
    out_t, out_k, out_p = [], [], []
    total = n_cand.sum()
    if total == 0:
        return np.empty(0), np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    owner = np.repeat(np.arange(p_idx.size), n_cand)
    for s in range(0, total, chunk):
        own = owner[s:s + chunk]
        u = rng.random(own.size)
        lag = (1.0 - u) * span[own]  # uniform on (0, span]
        keep = rng.random(own.size) < np.exp(-params.eta * lag)
        own = own[keep]
        out_t.append(parent_times[p_idx[own]] + lag[keep])
        out_k.append(k_idx[own])
        out_p.append(p_idx[own])
    return np.concatenate(out_t), np.concatenate(out_k), np.concatenate(out_p)


def background_bound(k: int, params: ModelParams, covariates: CovariateSeries, grid: TimeGrid) -> float:
    """Max of ``mu_k`` on a 1-minute grid, inflated by 5%."""
    fine = np.linspace(0.0, grid.horizon, int(np.ceil(grid.horizon)) + 1)
    return BOUND_SAFETY * float(np.max(background_rate(k, fine, params, covariates, grid)))


def simulate_hawkes(params: ModelParams, array: RecorderArray, covariates: CovariateSeries, grid: TimeGrid,
                    variant: ModelVariant, rng=None, allow_supercritical: bool = False,
                    max_events: int = 2_000_000):
    """Background events by thinning, then a generation-by-generation offspring cascade.

    Returns the sorted sequence and its true branching vector (0 for a
    contact call, otherwise the 1-based index of the parent event).
    """
    rng = np.random.default_rng(rng)
    variant = ModelVariant(variant)
    params.validate(variant, grid)
    T = grid.horizon
    if variant.has_cc:
        ratio = branching_ratios(params, array).max()
        if ratio >= 1 and not allow_supercritical:
            raise SupercriticalError(f"supercritical excitation: max branching ratio {ratio:.3f} >= 1")
    times, marks = [], []
    for k in range(array.K):
        bound = background_bound(k, params, covariates, grid)
        tk = simulate_nhpp(lambda t, k=k: background_rate(k, t, params, covariates, grid), bound, 0.0, T, rng)
        times.append(tk)
        marks.append(np.full(tk.size, k, dtype=np.int64))
    t_all = np.concatenate(times)
    m_all = np.concatenate(marks)
    parent = np.full(t_all.size, -1, dtype=np.int64)
    if variant.has_cc:
        gen = np.arange(t_all.size)
        while gen.size:
            ct, ck, cp = simulate_offspring(t_all[gen], m_all[gen], params, array, T, rng)
            start = t_all.size
            t_all = np.concatenate([t_all, ct])
            m_all = np.concatenate([m_all, ck])
            parent = np.concatenate([parent, gen[cp]])
            gen = np.arange(start, t_all.size)
            if t_all.size > max_events:
                raise SupercriticalError(f"cascade exceeded {max_events} events")
    order = np.argsort(t_all, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    seq = validate_sequence(t_all[order], m_all[order], T, array.K)
    par = parent[order]
    z = np.where(par < 0, 0, rank[np.maximum(par, 0)] + 1)
    return seq, z


def expected_total_count(params: ModelParams, array: RecorderArray, covariates: CovariateSeries,
                         grid: TimeGrid, dense: int = 4, cascade: bool = True) -> float:
    """Expected event total: contact calls amplified by the cascade (edge effects ignored).

    With ``cascade=False`` only contact calls are counted.
    """
    t = np.linspace(0.0, grid.horizon, dense * grid.n_intervals + 1)
    contacts = np.array([trapezoid(background_rate(k, t, params, covariates, grid), t) for k in range(array.K)])
    if not params.has_cc or not cascade:
        return float(contacts.sum())
    G = branching_matrix(params, array)
    totals = np.linalg.solve(np.eye(array.K) - G.T, contacts)
    return float(totals.sum())


def calibrate_intercepts(params: ModelParams, array: RecorderArray, covariates: CovariateSeries,
                         grid: TimeGrid, target: float) -> ModelParams:
    """Shift every intercept by one common amount so the expected total hits ``target``.

    For supercritical excitation the expected total is infinite; the
    contact calls alone are calibrated instead.
    """
    cascade = not (params.has_cc and branching_ratios(params, array).max() >= 1)

    def excess(shift):
        p = params.copy()
        p.beta[0] += shift
        return np.log(expected_total_count(p, array, covariates, grid, cascade=cascade)) - np.log(target)

    shift = brentq(excess, -30.0, 30.0, xtol=1e-10)
    out = params.copy()
    out.beta[0] += shift
    out.beta_tilde[0] = float(out.beta[0].mean())
    return out


def synthetic_noise(K: int, horizon: float, rng=None, step: float = 10.0, corr_range: float = 360.0,
                    level: float = 100.0, scale: float = 4.0) -> CovariateSeries:
    """Stationary AR(1) ambient-noise series (dB-like) sampled every ``step`` minutes."""
    rng = np.random.default_rng(rng)
    t = np.arange(0.0, horizon + step, step)
    rho = np.exp(-3.0 * step / corr_range)
    times, values = [], []
    for _ in range(K):
        x = np.empty(t.size)
        x[0] = rng.standard_normal()
        eps = rng.standard_normal(t.size) * np.sqrt(1 - rho ** 2)
        for i in range(1, t.size):
            x[i] = rho * x[i - 1] + eps[i]
        times.append(t)
        values.append(level + rng.normal(0, 2) + scale * x)
    return CovariateSeries.from_arrays(times, values, standardize=True)


# Harmonic coefficients giving dusk/dawn and night peaks, order sin8 cos8 sin12 cos12 sin24 cos24.
_HARMONIC_MEANS = np.array([0.15, -0.10, 0.20, 0.25, -0.15, 0.35])


def study_params(array: RecorderArray, grid: TimeGrid, variant: ModelVariant, rng=None,
                       alpha=None, eta: Optional[float] = None, phi: Optional[float] = None,
                       delta: float = 0.8) -> ModelParams:
    """Generating parameters for simulation studies on the recorder array.

    Intercepts are placeholders; use :func:`calibrate_intercepts` to set
    the expected event count.
    """
    rng = np.random.default_rng(rng)
    variant = ModelVariant(variant)
    K = array.K
    V = array.V
    L = jittered_cholesky(V)
    tau = np.full(N_COEF, 0.01)
    beta_tilde = np.concatenate([[-4.0, -0.3], _HARMONIC_MEANS])
    beta = beta_tilde[:, None] + np.sqrt(tau)[:, None] * (L @ rng.standard_normal((K, N_COEF))).T
    p = ModelParams(beta=beta, beta_tilde=beta_tilde, tau=tau)
    if variant.has_gp:
        log_delta = np.log(delta) + np.sqrt(0.01) * (L @ rng.standard_normal(K))
        p.delta = np.exp(log_delta)
        p.delta_tilde = float(np.log(delta))
        p.tau_delta = 0.01
        p.w_grid = draw_gp(grid, rng=rng)
    if variant.has_cc:
        if K == 1:
            p.alpha = np.array([0.34 if alpha is None else float(np.ravel(alpha)[0])])
            p.eta = 0.51 if eta is None else eta
            p.phi = None
        else:
            if alpha is None:
                base = np.array([0.06, 0.04, 0.03, 0.06, 0.06, 0.03, 0.04, 0.06, 0.04, 0.005])
                alpha = base[:K] if K <= base.size else np.full(K, 0.04)
            p.alpha = np.asarray(alpha, dtype=float)
            p.eta = 0.151 if eta is None else eta
            p.phi = 0.32 if phi is None else phi
    return p


def simulate_dataset(variant: ModelVariant, array: RecorderArray, horizon: float, seed: int,
                     target_count: float = 2750.0, grid_spacing: float = 20.0, allow_supercritical: bool = False,
                     **param_kw):
    """Parameters, covariates and one realization for a simulation-study cell."""
    ss = np.random.SeedSequence(seed)
    r_noise, r_par, r_sim = (np.random.default_rng(s) for s in ss.spawn(3))
    grid = TimeGrid.from_spacing(horizon, grid_spacing)
    cov = synthetic_noise(array.K, horizon, r_noise)
    params = study_params(array, grid, variant, r_par, **param_kw)
    if params.has_cc and not allow_supercritical:
        ratio = branching_ratios(params, array).max()
        if ratio >= 1:
            raise SupercriticalError(f"supercritical excitation: max branching ratio {ratio:.3f} >= 1")
    params = calibrate_intercepts(params, array, cov, grid, target_count)
    data, z = simulate_hawkes(params, array, cov, grid, variant, r_sim, allow_supercritical)
    return params, cov, grid, data, z
