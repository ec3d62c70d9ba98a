"""Model assessment over a posterior chain.

Random-time-change residuals, the Exp(1) Q-Q comparison and its mean squared
difference, DIC, HPD intervals and the split of expected calls into contact
and counter-call parts.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import ModelParams, ValidationError
from .inference import PosteriorChain, chain_columns, chain_to_matrix
from .intensity import HawkesModel

log = logging.getLogger(__name__)

LN2 = math.log(2.0)


def _draw_indices(chain: PosteriorChain, stride: int = 1) -> np.ndarray:
    if chain.n_draws == 0:
        raise ValidationError("chain has no stored draws")
    if stride < 1:
        raise ValidationError("stride must be at least 1")
    return np.arange(0, chain.n_draws, stride)


# ---------------------------------------------------------------------------
# random time change
# ---------------------------------------------------------------------------
def rtct_transform(model: HawkesModel, params: ModelParams) -> np.ndarray:
    """Transformed inter-event gaps ``d*_i = Lambda(t_i) - Lambda(t_{i-1})`` with ``Lambda(t_0) = 0``."""
    lam = model.compensator_at_events(params)
    return np.diff(lam, prepend=0.0)


@dataclass(frozen=True)
class RTCTSummary:
    """Posterior summaries of the sorted transformed gaps, one entry per order statistic."""

    mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    n_draws: int

    @property
    def theoretical(self) -> np.ndarray:
        return exp1_quantiles(self.mean.size)


def posterior_rtct(model: HawkesModel, chain: PosteriorChain, level: float = 0.95, stride: int = 1) -> RTCTSummary:
    """Sort the gaps within each draw, then summarise every order statistic across draws."""
    idx = _draw_indices(chain, stride)
    gaps = np.empty((idx.size, model.n))
    for r, s in enumerate(idx):
        gaps[r] = np.sort(rtct_transform(model, chain.params_at(s)))
    tail = 0.5 * (1.0 - level)
    lo, hi = np.quantile(gaps, [tail, 1.0 - tail], axis=0)
    return RTCTSummary(mean=gaps.mean(axis=0), lo=lo, hi=hi, n_draws=idx.size)


def exp1_quantiles(n: int) -> np.ndarray:
    """Exp(1) quantiles at plotting positions ``(i - 0.5)/n``: ``log(n / (n - i + 0.5))``."""
    if n < 1:
        raise ValidationError("need at least one gap")
    i = np.arange(1, n + 1)
    return np.log(n / (n - i + 0.5))


def qq_exp1(gaps) -> tuple[np.ndarray, np.ndarray]:
    """(theoretical, sample) quantile pairs; the sample is sorted here."""
    sample = np.sort(np.asarray(gaps, dtype=float))
    if sample.size < 2:
        raise ValidationError("a Q-Q comparison needs at least two gaps")
    return exp1_quantiles(sample.size), sample


def msd(gaps) -> float:
    """Mean squared difference between sorted gaps and Exp(1) quantiles."""
    q, sample = qq_exp1(gaps)
    return float(np.mean((sample - q) ** 2))


# ---------------------------------------------------------------------------
# DIC
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class DICResult:
    dbar: float
    p_d: float
    dic: float

    def as_dict(self) -> dict:
        return {"dbar": self.dbar, "p_d": self.p_d, "dic": self.dic}


def deviance_information(loglik: np.ndarray, loglik_at_mean: float) -> DICResult:
    """``Dbar = mean(-2 log L)``, ``p_D = Dbar + 2 log L(theta_hat)``, ``DIC = Dbar + p_D``."""
    loglik = np.asarray(loglik, dtype=float)
    if loglik.size == 0:
        raise ValidationError("no log-likelihood values")
    dbar = float(np.mean(-2.0 * loglik))
    p_d = dbar + 2.0 * float(loglik_at_mean)
    if p_d < 0:
        log.warning("negative effective number of parameters (p_D = %.3g); the chain may not have mixed", p_d)
    return DICResult(dbar=dbar, p_d=p_d, dic=dbar + p_d)


def dic(model: HawkesModel, chain: PosteriorChain) -> DICResult:
    """DIC from the stored observed-data log-likelihoods and the posterior-mean parameters."""
    if chain.n_draws == 0:
        raise ValidationError("chain has no stored draws")
    theta_hat = chain.posterior_mean()
    return deviance_information(chain.loglik, model.log_likelihood(theta_hat))


# ---------------------------------------------------------------------------
# HPD
# ---------------------------------------------------------------------------
def hpd(samples, level: float = 0.95) -> tuple[float, float]:
    """Shortest interval holding ``ceil(level * n)`` of the sorted samples."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise ValidationError("hpd needs at least one sample")
    if not 0.0 < level < 1.0:
        raise ValidationError("level must lie in (0, 1)")
    m = max(1, math.ceil(level * n - 1e-9))
    widths = x[m - 1:] - x[: n - m + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + m - 1])


def hpd_columns(samples: np.ndarray, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
    """Columnwise :func:`hpd` over the leading (draw) axis."""
    flat = samples.reshape(samples.shape[0], -1)
    bounds = np.array([hpd(flat[:, c], level) for c in range(flat.shape[1])]).reshape(-1, 2)
    shape = samples.shape[1:]
    return bounds[:, 0].reshape(shape), bounds[:, 1].reshape(shape)


# ---------------------------------------------------------------------------
# expected-call decomposition
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CallDecomposition:
    """Per-draw expected call counts over ``(0, T]``.

    ``cross[s, l, k]`` is the expected number of counter-calls at recorder
    ``k`` answering calls made at recorder ``l``.
    """

    contact: np.ndarray  # (S, K)
    cross: np.ndarray  # (S, K, K)

    @property
    def counter(self) -> np.ndarray:
        return self.cross.sum(axis=1)

    @property
    def total(self) -> np.ndarray:
        return self.contact + self.counter

    @property
    def grand_total(self) -> np.ndarray:
        return self.total.sum(axis=1)

    def summary(self, level: float = 0.95) -> dict:
        out = {}
        for name in ("contact", "counter", "total", "cross", "grand_total"):
            arr = getattr(self, name)
            lo, hi = hpd_columns(arr if arr.ndim > 1 else arr[:, None], level)
            mean = arr.mean(axis=0)
            if arr.ndim == 1:
                lo, hi = lo[0], hi[0]
            out[name] = {"mean": mean, "lo": lo, "hi": hi}
        return out


def call_decomposition(model: HawkesModel, chain: PosteriorChain, stride: int = 1) -> CallDecomposition:
    """Expected contact calls and counter-calls (by source and receiving recorder) per draw."""
    idx = _draw_indices(chain, stride)
    K = model.K
    contact = np.empty((idx.size, K))
    cross = np.zeros((idx.size, K, K))
    for r, s in enumerate(idx):
        p = chain.params_at(s)
        contact[r] = model.mu_integrals(model.mu_nodes(p))
        if p.has_cc:
            w = p.alpha[model.marks] * -np.expm1(-p.eta * (model.T - model.times)) / p.eta
            by_source = np.bincount(model.marks, weights=w, minlength=K)
            cross[r] = by_source[:, None] * model.spatial_matrix(p.phi)
    return CallDecomposition(contact=contact, cross=cross)


# ---------------------------------------------------------------------------
# derived quantities
# ---------------------------------------------------------------------------
def median_response_time(eta):
    """Median of the Exp(eta) response delay, ``log 2 / eta`` minutes."""
    return LN2 / np.asarray(eta, dtype=float)


def distance_survival(phi, d):
    """Spatial factor ``exp(-phi d)`` of a counter-call received ``d`` km away."""
    return np.exp(-np.multiply.outer(np.asarray(phi, dtype=float), np.asarray(d, dtype=float)))


def derived_quantities(chain: PosteriorChain, distances: Optional[Sequence[float]] = None,
                       level: float = 0.95) -> dict:
    """Median response time and distance survival per draw, with means and HPD intervals."""
    if not chain.variant.has_cc:
        raise ValidationError("derived quantities need a counter-call variant")
    _draw_indices(chain)
    eta = chain.samples["eta"]
    out = {"median_response_min": _summ(median_response_time(eta), level)}
    if distances is not None and "phi" in chain.samples:
        surv = distance_survival(chain.samples["phi"], distances)
        out["distance_survival"] = {
            float(d): _summ(surv[:, c], level) for c, d in enumerate(np.atleast_1d(distances))
        }
    return out


def _summ(x: np.ndarray, level: float) -> dict:
    lo, hi = hpd(x, level)
    return {"mean": float(np.mean(x)), "lo": lo, "hi": hi, "draws": x}


def summarize_chain(chain: PosteriorChain, level: float = 0.95, include_grid: bool = False) -> dict:
    """Posterior mean and HPD interval for every scalar parameter coordinate."""
    mat = chain_to_matrix(chain)[:, 2:]
    out = {}
    for c, name in enumerate(chain_columns(chain.variant, chain.K, chain.grid_size)):
        if name.startswith("w_") and not include_grid:
            continue
        lo, hi = hpd(mat[:, c], level)
        out[name] = {"mean": float(mat[:, c].mean()), "hpd_lo": lo, "hpd_hi": hi}
    return out
