"""Background and counter-call intensities, compensators and likelihoods.

Two evaluation paths live here. The scalar functions (``background_rate``,
``countercall_rate``, ``compensator_*``) follow the formulas literally and are
meant for single queries and for checking. :class:`HawkesModel` precomputes
design matrices and the (child, parent) pair list for one dataset and
evaluates everything vectorised; the sampler and diagnostics use it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .core import (
    N_COEF,
    CovariateSeries,
    MarkedEventSequence,
    ModelParams,
    RecorderArray,
    TimeGrid,
    ValidationError,
    design_matrix,
)

log = logging.getLogger(__name__)

LINPRED_CLAMP = 50.0
# Parents whose kernel factor exp(-eta * lag) falls below this are dropped.
KERNEL_CUTOFF = 1e-12
DEFAULT_ETA_FLOOR = 3.0 / 20.0

_clamp_warned = False


def _clamp(lin):
    global _clamp_warned
    out = np.clip(lin, -LINPRED_CLAMP, LINPRED_CLAMP)
    if not _clamp_warned and np.any(out != lin):
        log.warning("background linear predictor clamped to +/-%g", LINPRED_CLAMP)
        _clamp_warned = True
    return out


def gp_at(t, params: ModelParams, grid: Optional[TimeGrid]):
    if not params.has_gp:
        return np.zeros_like(np.asarray(t, dtype=float))
    if grid is None:
        raise ValidationError("a time grid is needed to evaluate the GP term")
    return np.interp(t, grid.nodes, params.w_grid)


def background_rate(k: int, t, params: ModelParams, covariates: CovariateSeries,
                    grid: Optional[TimeGrid] = None):
    """Exact contact-call rate ``mu_k(t)`` (GP linearly interpolated from the grid)."""
    scalar = np.ndim(t) == 0
    X = design_matrix(k, t, covariates)
    lin = params.beta[0, k] + X @ params.beta[1:, k]
    if params.has_gp:
        lin = lin + params.delta[k] * gp_at(np.atleast_1d(t), params, grid)
    out = np.exp(_clamp(lin))
    return float(out[0]) if scalar else out


@dataclass(frozen=True, eq=False)
class BackgroundGrid:
    """Background rates at the grid nodes; ``mu~_k`` is their linear interpolant."""

    values: np.ndarray  # (K, M+1)
    grid: TimeGrid

    def __call__(self, k: int, t):
        return np.interp(t, self.grid.nodes, self.values[k])

    def cumulative(self, k: int, t):
        """Exact integral of the interpolant over ``(0, t]``."""
        v = self.values[k]
        h = self.grid.spacing
        cum = np.concatenate([[0.0], np.cumsum(0.5 * h * (v[1:] + v[:-1]))])
        idx, frac = self.grid.locate(t)
        left = v[idx]
        at_t = left + frac * (v[idx + 1] - left)
        return cum[idx] + 0.5 * frac * h * (left + at_t)


def build_background_grid(params: ModelParams, covariates: CovariateSeries, grid: TimeGrid) -> BackgroundGrid:
    nodes = grid.nodes
    vals = np.stack([background_rate(k, nodes, params, covariates, grid) for k in range(params.K)])
    vals.setflags(write=False)
    return BackgroundGrid(values=vals, grid=grid)


def compensator_background(k: int, a: float, b: float, background: BackgroundGrid) -> float:
    """Expected contact calls at recorder ``k`` on ``(a, b]`` (trapezoid, exact for the interpolant)."""
    if not a < b:
        raise ValidationError("compensator interval needs a < b")
    return float(background.cumulative(k, b) - background.cumulative(k, a))


def _spatial(array: RecorderArray, phi) -> np.ndarray:
    if array.K == 1 or phi is None:
        return np.ones((array.K, array.K))
    return np.exp(-phi * array.dist)


def countercall_rate(k: int, t: float, times, marks, params: ModelParams, array: RecorderArray) -> float:
    """Excitation felt at recorder ``k`` at time ``t`` from all events strictly before ``t``."""
    if not params.has_cc:
        return 0.0
    times = np.asarray(times, dtype=float)
    marks = np.asarray(marks)
    past = times < t
    if not np.any(past):
        return 0.0
    src = marks[past]
    spatial = _spatial(array, params.phi)[src, k]
    return float(np.sum(params.alpha[src] * np.exp(-params.eta * (t - times[past])) * spatial))


def conditional_intensity(k: int, t: float, times, marks, params: ModelParams, covariates: CovariateSeries,
                          array: RecorderArray, grid: Optional[TimeGrid] = None,
                          background: Optional[BackgroundGrid] = None) -> float:
    """``lambda_k(t | H_t)``; uses the interpolated background when ``background`` is given."""
    mu = background(k, t) if background is not None else background_rate(k, t, params, covariates, grid)
    return float(mu) + countercall_rate(k, t, times, marks, params, array)


def compensator_countercall(k: int, b: float, times, marks, params: ModelParams, array: RecorderArray) -> float:
    """Expected counter-calls at recorder ``k`` on ``(0, b]`` in closed form."""
    if not params.has_cc:
        return 0.0
    if not params.eta > 0:
        raise ValidationError("eta must be positive")
    times = np.asarray(times, dtype=float)
    marks = np.asarray(marks)
    past = times < b
    src = marks[past]
    spatial = _spatial(array, params.phi)[src, k]
    eta = params.eta
    return float(np.sum(params.alpha[src] / eta * -np.expm1(-eta * (b - times[past])) * spatial))


def pair_index(times: np.ndarray, window: float):
    """All (child, parent) index pairs with ``0 < t_child - t_parent < window``.

    Returned sorted by child, then parent, together with the first pair
    offset of every child.
    """
    n = len(times)
    lo = np.searchsorted(times, times - window, side="right")
    counts = np.arange(n) - lo
    counts = np.maximum(counts, 0)
    child = np.repeat(np.arange(n), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]]) if n else np.zeros(0, dtype=np.int64)
    offs = np.arange(child.size) - np.repeat(starts, counts)
    parent = np.repeat(lo, counts) + offs
    return child.astype(np.int64), parent.astype(np.int64), starts.astype(np.int64), counts.astype(np.int64)


class HawkesModel:
    """One dataset on one recorder array, ready for repeated likelihood evaluation.

    Excitation sums use the O(nK) recursion of the exponential kernel. The
    explicit (child, parent) pair list, truncated where the temporal factor
    drops below ``KERNEL_CUTOFF``, is built on first use; it serves
    per-pair queries and cross-checks of the recursion.
    """

    def __init__(self, data: MarkedEventSequence, array: RecorderArray, covariates: CovariateSeries,
                 grid: TimeGrid, eta_floor: float = DEFAULT_ETA_FLOOR):
        if data.n_recorders != array.K or covariates.K != array.K:
            raise ValidationError("data, array and covariates disagree on the number of recorders")
        if grid.horizon != data.horizon:
            raise ValidationError("grid horizon differs from the data horizon")
        self.data = data
        self.array = array
        self.covariates = covariates
        self.grid = grid
        self.K = array.K
        self.n = data.n
        self.T = data.horizon
        self.times = np.ascontiguousarray(data.times)
        self.marks = np.ascontiguousarray(data.marks)
        nodes = grid.nodes
        # (K, M+1, N_COEF) with the intercept column first
        X = np.stack([design_matrix(k, nodes, covariates) for k in range(self.K)])
        self.X_nodes = np.concatenate([np.ones(X.shape[:2] + (1,)), X], axis=2)
        self.cell, self.frac = grid.locate(self.times)
        self.counts = data.counts()
        self._eta_floor = eta_floor
        self._pairs = None

    # ----- pair bookkeeping -------------------------------------------------
    def _build_pairs(self):
        window = -np.log(KERNEL_CUTOFF) / self._eta_floor
        child, parent, starts, counts = pair_index(self.times, window)
        self._pairs = dict(child=child, parent=parent, start=starts, count=counts,
                           lag=self.times[child] - self.times[parent], src=self.marks[parent],
                           dist=self.array.dist[self.marks[parent], self.marks[child]])

    @property
    def pairs(self) -> dict:
        if self._pairs is None:
            self._build_pairs()
        return self._pairs

    def ensure_eta(self, eta: float):
        """Widen the pair window when ``eta`` is below the floor it was built for."""
        if eta < self._eta_floor:
            self._eta_floor = eta
            self._pairs = None

    # ----- background -------------------------------------------------------
    def linear_predictor(self, beta, delta=None, w=None) -> np.ndarray:
        lin = np.einsum("kmj,jk->km", self.X_nodes, beta)
        if w is not None:
            lin = lin + np.outer(delta, w)
        return _clamp(lin)

    def mu_nodes(self, params: ModelParams) -> np.ndarray:
        return np.exp(self.linear_predictor(params.beta, params.delta, params.w_grid))

    def background_grid(self, params: ModelParams) -> BackgroundGrid:
        return BackgroundGrid(values=self.mu_nodes(params), grid=self.grid)

    def mu_at_events(self, mu_nodes: np.ndarray) -> np.ndarray:
        left = mu_nodes[self.marks, self.cell]
        right = mu_nodes[self.marks, self.cell + 1]
        return left + self.frac * (right - left)

    def mu_integrals(self, mu_nodes: np.ndarray) -> np.ndarray:
        h = self.grid.spacing
        return h * (mu_nodes.sum(axis=1) - 0.5 * (mu_nodes[:, 0] + mu_nodes[:, -1]))

    def contact_loglik(self, mu_nodes: np.ndarray, contact: Optional[np.ndarray] = None) -> float:
        """Background factor of the complete-data likelihood; ``contact`` masks z_i = 0."""
        mu_ev = self.mu_at_events(mu_nodes)
        if contact is not None:
            mu_ev = mu_ev[contact]
        return float(np.sum(np.log(mu_ev)) - self.mu_integrals(mu_nodes).sum())

    # ----- counter-calls ----------------------------------------------------
    def spatial_matrix(self, phi) -> np.ndarray:
        return _spatial(self.array, phi)

    def spatial_sums(self, phi) -> np.ndarray:
        """``sum_k exp(-phi d[l, k])`` for each source recorder ``l``."""
        return self.spatial_matrix(phi).sum(axis=1)

    def excitation(self, alpha, eta, phi) -> np.ndarray:
        """Counter-call intensity at each event's own recorder just before the event."""
        return _kernels.excitation(self.times, self.marks, np.asarray(alpha, dtype=float), float(eta),
                                   self.spatial_matrix(phi))

    def excitation_by_source(self, eta, phi) -> np.ndarray:
        """(K, n) unit-alpha excitation per source recorder; ``alpha @ E`` is :meth:`excitation`."""
        return _kernels.excitation_by_source(self.times, self.marks, float(eta), self.spatial_matrix(phi))

    def pair_kernel(self, alpha, eta, phi) -> np.ndarray:
        self.ensure_eta(eta)
        pr = self.pairs
        expo = -eta * pr["lag"]
        if phi is not None and self.K > 1:
            expo = expo - phi * pr["dist"]
        return alpha[pr["src"]] * np.exp(expo)

    def excitation_pairs(self, alpha, eta, phi) -> np.ndarray:
        """Same as :meth:`excitation`, summed over the truncated pair list."""
        kernel = self.pair_kernel(alpha, eta, phi)
        return np.bincount(self.pairs["child"], weights=kernel, minlength=self.n)

    def exposure(self, eta, phi) -> np.ndarray:
        """Per event j: integral of its kernel summed over recorders, without the alpha factor."""
        return -np.expm1(-eta * (self.T - self.times)) / eta * self.spatial_sums(phi)[self.marks]

    def cc_compensator(self, alpha, eta, phi) -> float:
        return float(np.sum(alpha[self.marks] * self.exposure(eta, phi)))

    # ----- likelihoods ------------------------------------------------------
    def log_likelihood(self, params: ModelParams, mu_nodes=None, excite=None) -> float:
        """Observed-data log-likelihood with the interpolated background."""
        if mu_nodes is None:
            mu_nodes = self.mu_nodes(params)
        lam = self.mu_at_events(mu_nodes)
        total = self.mu_integrals(mu_nodes).sum()
        if params.has_cc:
            if excite is None:
                excite = self.excitation(params.alpha, params.eta, params.phi)
            lam = lam + excite
            total += self.cc_compensator(params.alpha, params.eta, params.phi)
        if np.any(~(lam > 0)):
            raise ValidationError("conditional intensity is not positive at an event")
        return float(np.sum(np.log(lam)) - total)

    def complete_log_likelihood(self, params: ModelParams, z: np.ndarray) -> float:
        z = check_branching(z, self.n)
        contact = z == 0
        ll = self.contact_loglik(self.mu_nodes(params), contact)
        if not params.has_cc:
            if not np.all(contact):
                raise ValidationError("counter-call labels under a variant without counter-calls")
            return ll
        child = np.flatnonzero(~contact)
        parent = z[child] - 1
        lag = self.times[child] - self.times[parent]
        dist = self.array.dist[self.marks[parent], self.marks[child]] if self.K > 1 else np.zeros(child.size)
        with np.errstate(divide="ignore"):
            logk = np.log(params.alpha[self.marks[parent]]) - params.eta * lag - params.phi_or_zero * dist
        return float(ll + logk.sum() - self.cc_compensator(params.alpha, params.eta, params.phi))

    # ----- compensator at events (random time change) -----------------------
    def compensator_at_events(self, params: ModelParams, mu_nodes=None) -> np.ndarray:
        """``Lambda(t_i) = sum_k int_0^{t_i} lambda_k`` for every event."""
        if mu_nodes is None:
            mu_nodes = self.mu_nodes(params)
        total = BackgroundGrid(values=mu_nodes.sum(axis=0, keepdims=True), grid=self.grid)
        lam = total.cumulative(0, self.times)
        if params.has_cc:
            eta = params.eta
            A = params.alpha[self.marks] / eta * self.spatial_sums(params.phi)[self.marks]
            before = np.concatenate([[0.0], np.cumsum(A)[:-1]])
            lam = lam + before - _kernels.decayed_mass(self.times, A, float(eta))
        return lam


def check_branching(z, n: int) -> np.ndarray:
    """Validate a branching vector: ``z[i] == 0`` or a 1-based earlier event index."""
    z = np.asarray(z, dtype=np.int64)
    if z.shape != (n,):
        raise ValidationError("branching vector must have one label per event")
    if n and (z.min() < 0 or np.any(z > np.arange(n))):
        raise ValidationError("branching label must point to an earlier event")
    return z


def log_likelihood(params: ModelParams, data: MarkedEventSequence, array: RecorderArray,
                   covariates: CovariateSeries, grid: TimeGrid) -> float:
    return HawkesModel(data, array, covariates, grid).log_likelihood(params)


def complete_data_log_likelihood(params: ModelParams, data: MarkedEventSequence, z, array: RecorderArray,
                                 covariates: CovariateSeries, grid: TimeGrid) -> float:
    return HawkesModel(data, array, covariates, grid).complete_log_likelihood(params, z)


def empty_params(K: int, grid_size: Optional[int] = None, cc: bool = False) -> ModelParams:
    """All-zero coefficients (unit background rate) with optional GP and CC blocks."""
    p = ModelParams(beta=np.zeros((N_COEF, K)), beta_tilde=np.zeros(N_COEF), tau=np.ones(N_COEF))
    if grid_size is not None:
        p.delta = np.ones(K)
        p.delta_tilde = 0.0
        p.tau_delta = 1.0
        p.w_grid = np.zeros(grid_size)
    if cc:
        p.alpha = np.zeros(K)
        p.eta = 1.0
        p.phi = 1.0 if K > 1 else None
    return p
