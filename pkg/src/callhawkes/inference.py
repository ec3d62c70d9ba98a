"""MCMC over the latent branching structure and all model parameters.

One sweep runs the full conditional updates in a fixed order:

    1  branching labels z            (Gibbs, counter-call variants)
    2  coefficient blocks beta_j     (random-walk MH, proposal s^2 V)
    3  block means beta~_j           (Gibbs, normal)
    4  block variances tau_j         (Gibbs, inverse gamma)
    5  GP values w at grid nodes     (elliptical slice)
    6  log GP loadings log delta     (random-walk MH, proposal s^2 V)
    7  delta~                        (Gibbs, normal)
    8  tau_delta                     (Gibbs, inverse gamma)
    9  excitation alpha_l            (Gibbs, gamma)
    10 temporal decay eta            (MH on log scale)
    11 spatial decay phi             (MH on log scale, K >= 2)

Proposal scales adapt by Robbins-Monro during burn-in only.

The gamma prior on alpha has a spike at zero, and once a Gibbs draw lands
there no event is attributed to that recorder again, so step 9 alone cannot
leave it. With ``alpha_refresh`` each sweep therefore opens with an extra
move on alpha that integrates z out (:func:`refresh_alpha`); step 1 then
redraws z from its full conditional, so the pair is a valid blocked update.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaln

from .core import (
    N_COEF,
    ModelParams,
    ModelVariant,
    NumericalError,
    ValidationError,
    jittered_cholesky,
)
from . import _kernels
from .intensity import HawkesModel
from .simulate import gp_cholesky

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PriorConfig:
    beta_tilde_var: float = 100.0
    delta_tilde_var: float = 100.0
    tau_shape: float = 2.0
    tau_scale: float = 1.0
    tau_delta_shape: float = 2.0
    tau_delta_scale: float = 1.0
    alpha_shape: float = 0.001
    alpha_scale: float = 1000.0
    # longest plausible response delay (minutes) sets the lower eta bound
    max_response_min: float = 20.0
    gp_range_min: float = 180.0

    def eta_bounds(self, model: HawkesModel) -> tuple[float, float]:
        lo = 3.0 / self.max_response_min
        gap = model.data.min_gap()
        hi = 3.0 / gap if np.isfinite(gap) else np.inf
        if not hi > lo:
            raise ValidationError("eta prior support is empty: events are too sparse")
        return lo, hi

    def phi_bounds(self, model: HawkesModel) -> tuple[float, float]:
        arr = model.array
        if arr.K < 2:
            raise ValidationError("phi is only defined for two or more recorders")
        return 3.0 / arr.max_distance, 3.0 / arr.min_distance


@dataclass(frozen=True)
class MCMCConfig:
    iterations: int = 100_000
    burn_in: int = 10_000
    thin: int = 1
    target_accept: float = 0.3
    adapt_exponent: float = 0.6
    init_eta_max: float = 1.0
    init_branching: float = 0.5
    alpha_refresh: bool = True
    ess_max_shrinks: int = 1000

    @classmethod
    def desk(cls, **kw) -> "MCMCConfig":
        return cls(iterations=20_000, burn_in=4_000, **kw)

    def __post_init__(self):
        if self.iterations <= self.burn_in or self.burn_in < 0 or self.thin < 1:
            raise ValidationError("need iterations > burn_in >= 0 and thin >= 1")

    @property
    def n_stored(self) -> int:
        return (self.iterations - self.burn_in + self.thin - 1) // self.thin


class AdaptiveScale:
    """Robbins-Monro adaptation of a log proposal scale toward a target acceptance rate."""

    def __init__(self, scale: float, target: float = 0.3, exponent: float = 0.6):
        self.log_scale = np.log(scale)
        self.target = target
        self.exponent = exponent
        self.n = 0
        self.accepted = 0
        self.attempts = 0

    @property
    def scale(self) -> float:
        return float(np.exp(self.log_scale))

    def record(self, accept_prob: float, accepted: bool, adapt: bool):
        if adapt:
            self.n += 1
            self.log_scale += (accept_prob - self.target) / self.n ** self.exponent
        else:
            self.attempts += 1
            self.accepted += int(accepted)

    @property
    def rate(self) -> float:
        return self.accepted / self.attempts if self.attempts else float("nan")


# ---------------------------------------------------------------------------
# Step 1: branching labels
# ---------------------------------------------------------------------------
def branching_probabilities(model: HawkesModel, params: ModelParams, i: int, mu_nodes=None) -> np.ndarray:
    """Full conditional of ``z_i`` over ``{0, 1, ..., i}`` (0-based event ``i``; label j means event j-1)."""
    if mu_nodes is None:
        mu_nodes = model.mu_nodes(params)
    mu_i = model.mu_at_events(mu_nodes)[i]
    w = np.zeros(i + 1)
    w[0] = mu_i
    if params.has_cc and i > 0:
        t, m = model.times, model.marks
        lag = t[i] - t[:i]
        d = model.array.dist[m[:i], m[i]] if model.K > 1 else 0.0
        w[1:] = params.alpha[m[:i]] * np.exp(-params.eta * lag - params.phi_or_zero * d)
    return w / w.sum()


def sample_branching(model: HawkesModel, params: ModelParams, mu_events: np.ndarray, rng,
                     excite: Optional[np.ndarray] = None) -> np.ndarray:
    """Draw every ``z_i`` from its full conditional (independent across events given the rest)."""
    if not params.has_cc:
        return np.zeros(model.n, dtype=np.int64)
    if excite is None:
        excite = model.excitation(params.alpha, params.eta, params.phi)
    u = rng.random(model.n)
    return _kernels.sample_parents(model.times, model.marks, np.asarray(params.alpha, dtype=float),
                                   float(params.eta), model.spatial_matrix(params.phi), mu_events, excite, u)


# ---------------------------------------------------------------------------
# Steps 2/6: Gaussian block MH with hierarchical MVN prior
# ---------------------------------------------------------------------------
def mvn_logprior(x, mean, tau, V_inv) -> float:
    r = x - mean
    return float(-0.5 * r @ V_inv @ r / tau)


def update_beta_block(x: np.ndarray, loglik_fn: Callable, mean: float, tau: float, V_inv: np.ndarray,
                      V_chol: np.ndarray, scale: float, rng, current_ll: Optional[float] = None):
    """One random-walk MH move for a length-K block under ``MVN(mean 1, tau V)``.

    Returns ``(x_new, ll_new, accept_prob, accepted)``. Used for every
    ``beta_j`` and for ``log delta``.
    """
    if current_ll is None:
        current_ll = loglik_fn(x)
    prop = x + scale * (V_chol @ rng.standard_normal(x.size))
    ll_prop = loglik_fn(prop)
    log_ratio = (ll_prop + mvn_logprior(prop, mean, tau, V_inv)) - (current_ll + mvn_logprior(x, mean, tau, V_inv))
    accept_prob = float(np.exp(min(0.0, log_ratio))) if np.isfinite(log_ratio) else 0.0
    if rng.random() < accept_prob:
        return prop, ll_prop, accept_prob, True
    return x, current_ll, accept_prob, False


update_log_delta = update_beta_block


# ---------------------------------------------------------------------------
# Steps 3/4/7/8: conjugate hierarchical updates
# ---------------------------------------------------------------------------
def block_mean_conditional(x: np.ndarray, tau: float, V_inv: np.ndarray, prior_var: float = 100.0):
    """Normal full conditional of the common mean of a block: ``(mean, variance)``."""
    ones = np.ones(x.size)
    Vi1 = V_inv @ ones
    var = 1.0 / (ones @ Vi1 / tau + 1.0 / prior_var)
    return var * (x @ Vi1) / tau, var


def update_beta_tilde(x, tau, V_inv, rng, prior_var: float = 100.0) -> float:
    mean, var = block_mean_conditional(x, tau, V_inv, prior_var)
    return float(mean + np.sqrt(var) * rng.standard_normal())


update_delta_tilde = update_beta_tilde


def tau_conditional(x, mean, V_inv, shape: float = 2.0, scale: float = 1.0):
    """Inverse-gamma full conditional of a block variance: ``(shape, scale)``."""
    r = x - mean
    return shape + 0.5 * x.size, scale + 0.5 * float(r @ V_inv @ r)


def update_tau(x, mean, V_inv, rng, shape: float = 2.0, scale: float = 1.0) -> float:
    a, b = tau_conditional(x, mean, V_inv, shape, scale)
    return float(b / rng.gamma(a))


update_tau_delta = update_tau


# ---------------------------------------------------------------------------
# Step 5: elliptical slice sampling
# ---------------------------------------------------------------------------
def update_gp_ess(w: np.ndarray, loglik_fn: Callable, prior_chol: np.ndarray, rng,
                  current_ll: Optional[float] = None, max_shrinks: int = 1000):
    """One elliptical slice move for ``w ~ N(0, L L^T)``; returns ``(w_new, ll_new)``."""
    if current_ll is None:
        current_ll = loglik_fn(w)
    nu = prior_chol @ rng.standard_normal(w.size)
    threshold = current_ll + np.log(rng.random())
    theta = rng.uniform(0.0, 2.0 * np.pi)
    lo, hi = theta - 2.0 * np.pi, theta
    for _ in range(max_shrinks):
        prop = w * np.cos(theta) + nu * np.sin(theta)
        ll = loglik_fn(prop)
        if ll > threshold:
            return prop, ll
        if theta < 0:
            lo = theta
        else:
            hi = theta
        theta = rng.uniform(lo, hi)
    raise NumericalError("elliptical slice sampler did not terminate")


# ---------------------------------------------------------------------------
# Step 9: excitation weights
# ---------------------------------------------------------------------------
def offspring_counts(model: HawkesModel, z: np.ndarray) -> np.ndarray:
    """Number of events attributed to parents at each recorder."""
    kids = z > 0
    return np.bincount(model.marks[z[kids] - 1], minlength=model.K)


def alpha_conditional(model: HawkesModel, z, eta: float, phi, prior: PriorConfig = PriorConfig()):
    """Gamma full conditionals of all ``alpha_l``: arrays ``(shape, scale)``."""
    exposure = np.bincount(model.marks, weights=model.exposure(eta, phi), minlength=model.K)
    shape = prior.alpha_shape + offspring_counts(model, z)
    scale = 1.0 / (1.0 / prior.alpha_scale + exposure)
    return shape, scale


def update_alpha(model: HawkesModel, z, eta: float, phi, rng, prior: PriorConfig = PriorConfig()) -> np.ndarray:
    shape, scale = alpha_conditional(model, z, eta, phi, prior)
    return rng.gamma(shape, scale)


def _log_gamma_pdf(x, shape, scale):
    return (shape - 1.0) * np.log(x) - x / scale - gammaln(shape) - shape * np.log(scale)


def refresh_alpha(alpha: np.ndarray, unit_excite: np.ndarray, mu_events: np.ndarray, unit_exposure: np.ndarray,
                  counts: np.ndarray, rng, prior: PriorConfig = PriorConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Independence MH on each ``alpha_l`` against the observed-data likelihood (z integrated out).

    ``unit_excite`` is the (K, n) unit-alpha excitation, ``unit_exposure[l]``
    the compensator of recorder ``l``'s kernels per unit alpha and ``counts``
    the events per recorder. Proposals mix the prior, which reaches its spike
    at zero, with an exponential whose mean puts the branching ratio of
    recorder ``l`` at one half. Returns ``(alpha, accepted)``.
    """
    alpha = np.array(alpha, dtype=float)
    accepted = np.zeros(alpha.size, dtype=bool)
    excite = alpha @ unit_excite
    for l in range(alpha.size):
        if counts[l] == 0 or unit_exposure[l] <= 0:
            continue
        e = unit_excite[l]
        base = mu_events + np.maximum(excite - alpha[l] * e, 0.0)
        bulk = 0.5 * counts[l] / unit_exposure[l]

        def log_mix(x):
            # log of q(x) / prior(x) for q = (prior + Exp(bulk)) / 2, finite at x = 0
            if x <= 0.0:
                return np.log(0.5)
            log_ratio = -np.log(bulk) - x / bulk - _log_gamma_pdf(x, prior.alpha_shape, prior.alpha_scale)
            return np.logaddexp(0.0, log_ratio) + np.log(0.5)

        def ll(x):
            return float(np.sum(np.log(base + x * e)) - x * unit_exposure[l])

        if rng.random() < 0.5:
            prop = rng.gamma(prior.alpha_shape, prior.alpha_scale)
        else:
            prop = rng.exponential(bulk)
        log_r = ll(prop) - ll(alpha[l]) + log_mix(alpha[l]) - log_mix(prop)
        if np.log(rng.random()) < log_r:
            excite = excite + (prop - alpha[l]) * e
            alpha[l] = prop
            accepted[l] = True
    return alpha, accepted


# ---------------------------------------------------------------------------
# Steps 10/11: decay parameters
# ---------------------------------------------------------------------------
def update_positive_scalar(x: float, loglik_fn: Callable, bounds: tuple, scale: float, rng,
                           current_ll: Optional[float] = None):
    """Log-scale random walk under a uniform prior on ``bounds``.

    Proposals outside the support are rejected outright. Returns
    ``(x_new, ll_new, accept_prob, accepted)``.
    """
    if current_ll is None:
        current_ll = loglik_fn(x)
    prop = x * np.exp(scale * rng.standard_normal())
    if not bounds[0] <= prop <= bounds[1]:
        return x, current_ll, 0.0, False
    ll_prop = loglik_fn(prop)
    # log(prop / x) is the Jacobian of the log-scale walk
    log_ratio = ll_prop - current_ll + np.log(prop / x)
    accept_prob = float(np.exp(min(0.0, log_ratio))) if np.isfinite(log_ratio) else 0.0
    if rng.random() < accept_prob:
        return prop, ll_prop, accept_prob, True
    return x, current_ll, accept_prob, False


update_eta = update_positive_scalar
update_phi = update_positive_scalar


def eta_loglik_fn(model: HawkesModel, alpha, phi, z) -> Callable:
    """Counter-call part of the complete-data likelihood as a function of eta."""
    kids = np.flatnonzero(z > 0)
    lag_sum = float(np.sum(model.times[kids] - model.times[z[kids] - 1]))
    weight = alpha[model.marks] * model.spatial_sums(phi)[model.marks]
    span = model.T - model.times

    def fn(eta):
        return float(-np.sum(weight * -np.expm1(-eta * span)) / eta - eta * lag_sum)

    return fn


def phi_loglik_fn(model: HawkesModel, alpha, eta, z) -> Callable:
    """Counter-call part of the complete-data likelihood as a function of phi."""
    kids = np.flatnonzero(z > 0)
    dist_sum = float(np.sum(model.array.dist[model.marks[z[kids] - 1], model.marks[kids]]))
    src_weight = np.bincount(model.marks, weights=alpha[model.marks] * -np.expm1(-eta * (model.T - model.times)) / eta,
                             minlength=model.K)
    dist = model.array.dist

    def fn(phi):
        return float(-np.sum(src_weight * np.exp(-phi * dist).sum(axis=1)) - phi * dist_sum)

    return fn


# ---------------------------------------------------------------------------
# Posterior container
# ---------------------------------------------------------------------------
@dataclass
class PosteriorChain:
    variant: ModelVariant
    K: int
    grid_size: int
    samples: dict
    loglik: np.ndarray
    iteration: np.ndarray
    loglik_trace: np.ndarray = None
    acceptance: dict = field(default_factory=dict)
    seed: Optional[int] = None
    config: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return int(self.loglik.size)

    def params_at(self, s: int) -> ModelParams:
        kw = {}
        for name, arr in self.samples.items():
            v = arr[s]
            kw[name] = v.copy() if isinstance(v, np.ndarray) and v.ndim else float(v)
        return ModelParams(**kw)

    def posterior_mean(self) -> ModelParams:
        """Coordinatewise mean on the natural scale of every parameter."""
        kw = {}
        for name, arr in self.samples.items():
            m = arr.mean(axis=0)
            kw[name] = m if m.ndim else float(m)
        return ModelParams(**kw)

    def __iter__(self):
        for s in range(self.n_draws):
            yield self.params_at(s)

    def subset(self, idx) -> "PosteriorChain":
        idx = np.asarray(idx)
        return PosteriorChain(self.variant, self.K, self.grid_size,
                              {k: v[idx] for k, v in self.samples.items()}, self.loglik[idx], self.iteration[idx],
                              self.loglik_trace, dict(self.acceptance), self.seed, dict(self.config))


def chain_columns(variant: ModelVariant, K: int, grid_size: int) -> list[str]:
    """Column order of the serialised chain (after ``iteration`` and ``loglik``)."""
    cols = [f"beta_{j}_{k + 1}" for j in range(N_COEF) for k in range(K)]
    cols += [f"beta_tilde_{j}" for j in range(N_COEF)]
    cols += [f"tau_{j}" for j in range(N_COEF)]
    if variant.has_gp:
        cols += [f"delta_{k + 1}" for k in range(K)] + ["delta_tilde", "tau_delta"]
        cols += [f"w_{m}" for m in range(grid_size)]
    if variant.has_cc:
        cols += [f"alpha_{k + 1}" for k in range(K)] + ["eta"]
        if K > 1:
            cols.append("phi")
    return cols


def _param_names(variant: ModelVariant, K: int):
    names = ["beta", "beta_tilde", "tau"]
    if variant.has_gp:
        names += ["delta", "delta_tilde", "tau_delta", "w_grid"]
    if variant.has_cc:
        names += ["alpha", "eta"] + (["phi"] if K > 1 else [])
    return names


def chain_to_matrix(chain: PosteriorChain) -> np.ndarray:
    parts = [chain.iteration[:, None].astype(float), chain.loglik[:, None]]
    for name in _param_names(chain.variant, chain.K):
        arr = chain.samples[name]
        parts.append(arr.reshape(arr.shape[0], -1))
    return np.hstack(parts)


def chain_from_matrix(mat: np.ndarray, variant: ModelVariant, K: int, grid_size: int, **meta) -> PosteriorChain:
    S = mat.shape[0]
    it = mat[:, 0].astype(np.int64)
    ll = mat[:, 1].copy()
    pos = 2
    shapes = {"beta": (N_COEF, K), "beta_tilde": (N_COEF,), "tau": (N_COEF,), "delta": (K,),
              "delta_tilde": (), "tau_delta": (), "w_grid": (grid_size,), "alpha": (K,), "eta": (), "phi": ()}
    samples = {}
    for name in _param_names(variant, K):
        shp = shapes[name]
        size = int(np.prod(shp)) if shp else 1
        samples[name] = mat[:, pos:pos + size].reshape((S,) + shp).copy()
        pos += size
    if pos != mat.shape[1]:
        raise ValidationError("chain column count does not match the variant")
    return PosteriorChain(variant=variant, K=K, grid_size=grid_size, samples=samples, loglik=ll, iteration=it, **meta)


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------
def initial_params(model: HawkesModel, variant: ModelVariant, prior: PriorConfig = PriorConfig(),
                   eta_max: float = 1.0, branching: float = 0.5) -> ModelParams:
    """Starting point: per-recorder log rates, no GP signal, moderate excitation.

    eta starts at the middle of its support unless that exceeds ``eta_max``,
    and alpha is set so every recorder's mean offspring count is
    ``branching``. Starting with weak excitation attributes almost no event
    to a parent, and alpha then collapses toward zero under its
    near-improper gamma prior while eta drifts over its support.
    """
    K, T = model.K, model.T
    beta = np.zeros((N_COEF, K))
    beta[0] = np.log(np.maximum(model.counts, 0.5) / T)
    p = ModelParams(beta=beta, beta_tilde=beta.mean(axis=1), tau=np.ones(N_COEF))
    if variant.has_gp:
        p.delta = np.full(K, 0.1)
        p.delta_tilde = float(np.log(0.1))
        p.tau_delta = 1.0
        p.w_grid = np.zeros(model.grid.size)
    if variant.has_cc:
        lo, hi = prior.eta_bounds(model)
        p.eta = min(0.5 * (lo + hi), max(eta_max, lo * 1.5))
        if K > 1:
            plo, phi_hi = prior.phi_bounds(model)
            p.phi = 0.5 * (plo + phi_hi)
        p.alpha = branching * p.eta / model.spatial_sums(p.phi)
    return p


class _State:
    """Mutable sampler state with cached background pieces."""

    def __init__(self, model: HawkesModel, params: ModelParams):
        self.model = model
        self.p = params
        self.lin_fixed = np.einsum("kmj,jk->km", model.X_nodes, params.beta)
        self.refresh_gp()

    def refresh_gp(self):
        p = self.p
        self.gp_part = np.outer(p.delta, p.w_grid) if p.has_gp else 0.0

    def mu_nodes(self, lin_fixed=None, gp_part=None):
        lf = self.lin_fixed if lin_fixed is None else lin_fixed
        gp = self.gp_part if gp_part is None else gp_part
        return np.exp(np.clip(lf + gp, -50.0, 50.0))


def run_mcmc(model: HawkesModel, variant, config: MCMCConfig = MCMCConfig(), prior: PriorConfig = PriorConfig(),
             seed: Optional[int] = None, init: Optional[ModelParams] = None, progress: bool = False) -> PosteriorChain:
    """Run one chain; all randomness comes from ``numpy.random.default_rng(seed)``."""
    variant = ModelVariant(variant)
    rng = np.random.default_rng(seed)
    K, n = model.K, model.n
    V = model.array.V
    V_chol = jittered_cholesky(V)
    V_inv = np.linalg.inv(V_chol @ V_chol.T)
    has_phi = variant.has_cc and K > 1
    if variant.has_cc:
        eta_bounds = prior.eta_bounds(model)
        phi_bounds = prior.phi_bounds(model) if has_phi else None
    gp_chol = gp_cholesky(model.grid, prior.gp_range_min) if variant.has_gp else None

    p = (init.copy() if init is not None else initial_params(model, variant, prior, config.init_eta_max, config.init_branching)).validate(variant, model.grid)
    st = _State(model, p)
    tgt, ex = config.target_accept, config.adapt_exponent
    beta_steps = [AdaptiveScale(0.1, tgt, ex) for _ in range(N_COEF)]
    delta_step = AdaptiveScale(0.1, tgt, ex)
    eta_step = AdaptiveScale(0.1, tgt, ex)
    phi_step = AdaptiveScale(0.1, tgt, ex)

    S = config.n_stored
    shapes = {"beta": (N_COEF, K), "beta_tilde": (N_COEF,), "tau": (N_COEF,)}
    if variant.has_gp:
        shapes.update(delta=(K,), delta_tilde=(), tau_delta=(), w_grid=(model.grid.size,))
    if variant.has_cc:
        shapes.update(alpha=(K,), eta=())
        if has_phi:
            shapes["phi"] = ()
    store = {k: np.empty((S,) + shp) for k, shp in shapes.items()}
    ll_store = np.empty(S)
    it_store = np.empty(S, dtype=np.int64)
    trace = np.empty(config.iterations)

    excite = None
    refresh_acc = np.zeros(K)
    counts = np.bincount(model.marks, minlength=K)
    z = np.zeros(n, dtype=np.int64)
    s_idx = 0
    t_start = time.perf_counter()
    stride = model.grid.size
    h = model.grid.spacing
    flat_all = model.marks * stride + model.cell
    flat, frac = flat_all, model.frac

    def contact_ll(mu):
        # background factor at the current contact calls, on flat node indices
        mf = mu.ravel()
        left = mf[flat]
        at = left + frac * (mf[flat + 1] - left)
        integral = h * (mf.sum() - 0.5 * (mu[:, 0].sum() + mu[:, -1].sum()))
        return float(np.sum(np.log(at)) - integral)

    for it in range(config.iterations):
        adapt = it < config.burn_in
        # 1. branching structure
        if variant.has_cc:
            mu_ev = model.mu_at_events(st.mu_nodes())
            if config.alpha_refresh:
                unit = model.excitation_by_source(p.eta, p.phi)
                unit_exposure = np.bincount(model.marks, weights=model.exposure(p.eta, p.phi), minlength=K)
                p.alpha, acc_l = refresh_alpha(p.alpha, unit, mu_ev, unit_exposure, counts, rng, prior)
                refresh_acc += acc_l
                excite = p.alpha @ unit
            else:
                excite = model.excitation(p.alpha, p.eta, p.phi)
            z = sample_branching(model, p, mu_ev, rng, excite)
            contact = z == 0
            flat, frac = flat_all[contact], model.frac[contact]
        cur = contact_ll(st.mu_nodes())
        # 2. coefficient blocks
        for j in range(N_COEF):
            Xj = model.X_nodes[:, :, j]

            def ll_beta(bj, j=j, Xj=Xj):
                lf = st.lin_fixed + (bj - p.beta[j])[:, None] * Xj
                return contact_ll(st.mu_nodes(lin_fixed=lf))

            new, cur, acc_p, acc = update_beta_block(p.beta[j], ll_beta, p.beta_tilde[j], p.tau[j], V_inv, V_chol,
                                                     beta_steps[j].scale, rng, cur)
            beta_steps[j].record(acc_p, acc, adapt)
            if acc:
                st.lin_fixed = st.lin_fixed + (new - p.beta[j])[:, None] * Xj
                p.beta[j] = new
        # 3. block means
        for j in range(N_COEF):
            p.beta_tilde[j] = update_beta_tilde(p.beta[j], p.tau[j], V_inv, rng, prior.beta_tilde_var)
        # 4. block variances
        for j in range(N_COEF):
            p.tau[j] = update_tau(p.beta[j], p.beta_tilde[j], V_inv, rng, prior.tau_shape, prior.tau_scale)
        if variant.has_gp:
            # 5. GP values
            def ll_w(w):
                return contact_ll(st.mu_nodes(gp_part=np.outer(p.delta, w)))

            p.w_grid, cur = update_gp_ess(p.w_grid, ll_w, gp_chol, rng, cur, config.ess_max_shrinks)
            st.refresh_gp()

            # 6. log GP loadings
            def ll_logd(ld):
                return contact_ll(st.mu_nodes(gp_part=np.outer(np.exp(ld), p.w_grid)))

            new, cur, acc_p, acc = update_log_delta(np.log(p.delta), ll_logd, p.delta_tilde, p.tau_delta, V_inv,
                                                    V_chol, delta_step.scale, rng, cur)
            delta_step.record(acc_p, acc, adapt)
            if acc:
                p.delta = np.exp(new)
                st.refresh_gp()
            # 7, 8
            log_d = np.log(p.delta)
            p.delta_tilde = update_delta_tilde(log_d, p.tau_delta, V_inv, rng, prior.delta_tilde_var)
            p.tau_delta = update_tau_delta(log_d, p.delta_tilde, V_inv, rng, prior.tau_delta_shape,
                                           prior.tau_delta_scale)
        if variant.has_cc:
            # 9. excitation
            p.alpha = update_alpha(model, z, p.eta, p.phi, rng, prior)
            # 10. temporal decay
            p.eta, _, acc_p, acc = update_eta(p.eta, eta_loglik_fn(model, p.alpha, p.phi, z), eta_bounds,
                                              eta_step.scale, rng)
            eta_step.record(acc_p, acc, adapt)
            # 11. spatial decay
            if has_phi:
                p.phi, _, acc_p, acc = update_phi(p.phi, phi_loglik_fn(model, p.alpha, p.eta, z), phi_bounds,
                                                  phi_step.scale, rng)
                phi_step.record(acc_p, acc, adapt)
            excite = model.excitation(p.alpha, p.eta, p.phi)
        ll = model.log_likelihood(p, mu_nodes=st.mu_nodes(), excite=excite) if _positive(p) else -np.inf
        if not np.isfinite(ll):
            raise NumericalError(f"non-finite log-likelihood at iteration {it}; state: {_dump(p)}")
        trace[it] = ll
        if not adapt and (it - config.burn_in) % config.thin == 0:
            for name, arr in store.items():
                arr[s_idx] = getattr(p, name)
            ll_store[s_idx] = ll
            it_store[s_idx] = it
            s_idx += 1
        if progress and (it + 1) % 1000 == 0:
            log.info("iteration %d/%d loglik %.3f (%.1fs)", it + 1, config.iterations, ll,
                     time.perf_counter() - t_start)

    acceptance = {f"beta_{j}": beta_steps[j].rate for j in range(N_COEF)}
    scales = {f"beta_{j}": beta_steps[j].scale for j in range(N_COEF)}
    if variant.has_gp:
        acceptance["log_delta"] = delta_step.rate
        scales["log_delta"] = delta_step.scale
    if variant.has_cc:
        acceptance["eta"] = eta_step.rate
        scales["eta"] = eta_step.scale
        if has_phi:
            acceptance["phi"] = phi_step.rate
            scales["phi"] = phi_step.scale
        if config.alpha_refresh:
            acceptance["alpha_refresh"] = float(refresh_acc.mean() / config.iterations)
    cfg = asdict(config)
    cfg["prior"] = asdict(prior)
    cfg["proposal_scales"] = scales
    cfg["seconds"] = time.perf_counter() - t_start
    return PosteriorChain(variant=variant, K=K, grid_size=model.grid.size, samples=store, loglik=ll_store,
                          iteration=it_store, loglik_trace=trace, acceptance=acceptance, seed=seed, config=cfg)


def _positive(p: ModelParams) -> bool:
    return not p.has_cc or (p.eta > 0 and np.all(p.alpha >= 0))


def _dump(p: ModelParams) -> str:
    out = []
    for name in ("beta_tilde", "tau", "delta", "alpha", "eta", "phi"):
        v = getattr(p, name)
        if v is not None:
            out.append(f"{name}={np.array2string(np.atleast_1d(v), precision=4)}")
    return ", ".join(out)
