"""Domain types shared by every other module.

Units are fixed: time in minutes, distance in kilometres, rates per minute.
Recorder marks are 0-based indices into ``RecorderArray.ids``; the file
layer maps recorder labels to these indices.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np

# Harmonic periods in minutes: 8, 12 and 24 hours.
HARMONIC_PERIODS = (480.0, 720.0, 1440.0)
# intercept + noise + 3 sine/cosine pairs
N_COEF = 8
COEF_NAMES = ("intercept", "noise", "sin8", "cos8", "sin12", "cos12", "sin24", "cos24")


class ValidationError(ValueError):
    """Input data or parameters violate a model invariant."""


class NumericalError(RuntimeError):
    """A numerical routine failed (non-finite likelihood, factorization, ...)."""


class ModelVariant(str, enum.Enum):
    NHPP = "nhpp"
    NHPP_GP = "nhpp-gp"
    NHPP_CC = "nhpp-cc"
    NHPP_GP_CC = "nhpp-gp-cc"

    @property
    def has_gp(self) -> bool:
        return self in (ModelVariant.NHPP_GP, ModelVariant.NHPP_GP_CC)

    @property
    def has_cc(self) -> bool:
        return self in (ModelVariant.NHPP_CC, ModelVariant.NHPP_GP_CC)

    @property
    def label(self) -> str:
        return {"nhpp": "(i) NHPP", "nhpp-gp": "(ii) NHPP+GP",
                "nhpp-cc": "(iii) NHPP+CC", "nhpp-gp-cc": "(iv) NHPP+GP+CC"}[self.value]

    def contains(self, other: "ModelVariant") -> bool:
        """True if ``other`` is a submodel of (or equal to) this variant."""
        return (self.has_gp or not other.has_gp) and (self.has_cc or not other.has_cc)


ALL_VARIANTS = tuple(ModelVariant)


def jittered_cholesky(C: np.ndarray, jitter: float = 1e-8, max_jitter: float = 1e-6) -> np.ndarray:
    """Lower Cholesky factor of ``C + eps*I``, escalating ``eps`` tenfold up to ``max_jitter``."""
    C = np.asarray(C, dtype=float)
    eye = np.eye(C.shape[0])
    eps = jitter
    while True:
        try:
            return np.linalg.cholesky(C + eps * eye)
        except np.linalg.LinAlgError:
            if eps >= max_jitter:
                raise NumericalError(f"Cholesky failed with diagonal jitter {eps:g}") from None
            eps *= 10.0


def build_spatial_correlation(dist: np.ndarray) -> np.ndarray:
    """Exponential correlation whose effective range is the array diameter.

    ``V[k, l] = exp(-3 d[k, l] / max d)``; a single recorder gives ``[[1]]``.
    """
    d = np.asarray(dist, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValidationError("distance matrix must be square")
    if np.any(~np.isfinite(d)) or np.any(d < 0):
        raise ValidationError("distances must be finite and nonnegative")
    if not np.allclose(d, d.T, rtol=0, atol=1e-9):
        raise ValidationError("distance matrix must be symmetric")
    if np.any(np.diag(d) != 0):
        raise ValidationError("distance matrix must have a zero diagonal")
    dmax = d.max()
    if dmax == 0:
        if d.shape[0] > 1:
            raise ValidationError("distinct recorders must have positive distance")
        return np.ones((1, 1))
    V = np.exp(-3.0 * d / dmax)
    np.fill_diagonal(V, 1.0)
    return V


@dataclass(frozen=True, eq=False)
class RecorderArray:
    ids: tuple
    dist: np.ndarray
    V: np.ndarray
    coords: Optional[np.ndarray] = None

    @classmethod
    def from_distances(cls, dist, ids: Optional[Sequence] = None, coords=None) -> "RecorderArray":
        d = np.array(dist, dtype=float)
        V = build_spatial_correlation(d)
        K = d.shape[0]
        if ids is None:
            ids = tuple(str(k + 1) for k in range(K))
        ids = tuple(str(i) for i in ids)
        if len(ids) != K or len(set(ids)) != K:
            raise ValidationError("recorder ids must be unique and match the distance matrix")
        for a in (d, V):
            a.setflags(write=False)
        if coords is not None:
            coords = np.array(coords, dtype=float)
            coords.setflags(write=False)
        return cls(ids=ids, dist=d, V=V, coords=coords)

    @classmethod
    def from_coords(cls, coords, ids: Optional[Sequence] = None) -> "RecorderArray":
        xy = np.asarray(coords, dtype=float)
        if xy.ndim != 2 or xy.shape[1] != 2:
            raise ValidationError("coordinates must be a K x 2 array of km positions")
        diff = xy[:, None, :] - xy[None, :, :]
        d = np.sqrt((diff ** 2).sum(-1))
        return cls.from_distances(d, ids=ids, coords=xy)

    @classmethod
    def single(cls, label: str = "1") -> "RecorderArray":
        return cls.from_distances([[0.0]], ids=(label,))

    @property
    def K(self) -> int:
        return len(self.ids)

    @property
    def min_distance(self) -> float:
        """Smallest distance between two distinct recorders."""
        if self.K < 2:
            raise ValidationError("needs at least two recorders")
        return float(self.dist[~np.eye(self.K, dtype=bool)].min())

    @property
    def max_distance(self) -> float:
        return float(self.dist.max())


@dataclass(frozen=True, eq=False)
class MarkedEventSequence:
    times: np.ndarray
    marks: np.ndarray
    horizon: float
    n_recorders: int

    @property
    def n(self) -> int:
        return len(self.times)

    def counts(self) -> np.ndarray:
        return np.bincount(self.marks, minlength=self.n_recorders)

    def min_gap(self) -> float:
        if self.n < 2:
            return np.inf
        return float(np.diff(self.times).min())

    def __eq__(self, other):
        if not isinstance(other, MarkedEventSequence):
            return NotImplemented
        return (self.horizon == other.horizon and self.n_recorders == other.n_recorders
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.marks, other.marks))


def validate_sequence(times, marks=None, horizon: float = None, n_recorders: int = None) -> MarkedEventSequence:
    """Check and normalise raw events into a :class:`MarkedEventSequence`.

    Unsorted input is sorted (stably) and re-checked. Duplicate timestamps,
    out-of-range marks and times outside ``(0, T]`` raise ValidationError.
    Passing an already-valid sequence returns it unchanged.
    """
    if isinstance(times, MarkedEventSequence):
        seq = times
        horizon = seq.horizon if horizon is None else horizon
        n_recorders = seq.n_recorders if n_recorders is None else n_recorders
        if horizon == seq.horizon and n_recorders == seq.n_recorders:
            _check_sorted(seq.times, seq.marks, seq.horizon, seq.n_recorders)
            return seq
        times, marks = seq.times, seq.marks
    if horizon is None or n_recorders is None:
        raise ValidationError("horizon and number of recorders are required")
    t = np.asarray(times, dtype=float).ravel()
    m_raw = np.asarray(marks).ravel()
    if t.shape != m_raw.shape:
        raise ValidationError("times and marks must have equal length")
    if m_raw.size and not np.all(np.equal(np.mod(m_raw, 1), 0)):
        raise ValidationError("marks must be integers")
    m = m_raw.astype(np.int64)
    order = np.argsort(t, kind="stable")
    t, m = t[order], m[order]
    _check_sorted(t, m, float(horizon), int(n_recorders))
    t.setflags(write=False)
    m.setflags(write=False)
    return MarkedEventSequence(times=t, marks=m, horizon=float(horizon), n_recorders=int(n_recorders))


def _check_sorted(t, m, horizon, K):
    if not np.isfinite(horizon) or horizon <= 0:
        raise ValidationError("horizon must be positive")
    if K < 1:
        raise ValidationError("need at least one recorder")
    if t.size == 0:
        return
    if not np.all(np.isfinite(t)):
        raise ValidationError("event times must be finite")
    if t[0] <= 0 or t[-1] > horizon:
        raise ValidationError(f"event times must lie in (0, {horizon:g}]")
    gaps = np.diff(t)
    if np.any(gaps < 0):
        raise ValidationError("event times are not sorted")
    if np.any(gaps == 0):
        i = int(np.flatnonzero(gaps == 0)[0])
        raise ValidationError(f"duplicate event time {t[i]!r}")
    if m.min() < 0 or m.max() >= K:
        bad = int(m[(m < 0) | (m >= K)][0])
        raise ValidationError(f"mark {bad} outside recorder range 0..{K - 1}")


@dataclass(frozen=True, eq=False)
class CovariateSeries:
    """Per-recorder ambient-noise samples, evaluated by piecewise-linear interpolation.

    Values beyond the sampled range are held constant at the nearest endpoint.
    With ``standardize`` the series of each recorder is centred and scaled
    by its own sample mean and standard deviation.
    """

    times: tuple
    values: tuple
    standardize: bool = True
    t0_clock_min: float = 0.0
    means: np.ndarray = field(default=None)
    sds: np.ndarray = field(default=None)

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise ValidationError("times and values need one entry per recorder")
        for t, v in zip(self.times, self.values):
            if len(t) != len(v):
                raise ValidationError("covariate times and values differ in length")
            if len(t) > 1 and np.any(np.diff(t) <= 0):
                raise ValidationError("covariate times must be strictly increasing")
        if self.means is None:
            means, sds = [], []
            for v in self.values:
                v = np.asarray(v, dtype=float)
                if self.standardize and v.size:
                    sd = float(v.std())
                    means.append(float(v.mean()))
                    sds.append(sd if sd > 0 else 1.0)
                else:
                    means.append(0.0)
                    sds.append(1.0)
            object.__setattr__(self, "means", np.array(means))
            object.__setattr__(self, "sds", np.array(sds))

    @classmethod
    def from_arrays(cls, times, values, standardize=True, t0_clock_min=0.0) -> "CovariateSeries":
        ts = tuple(np.asarray(t, dtype=float) for t in times)
        vs = tuple(np.asarray(v, dtype=float) for v in values)
        return cls(times=ts, values=vs, standardize=standardize, t0_clock_min=float(t0_clock_min))

    @classmethod
    def zeros(cls, K: int, t0_clock_min: float = 0.0) -> "CovariateSeries":
        """No noise information: the noise column is identically zero."""
        return cls.from_arrays([np.array([0.0])] * K, [np.array([0.0])] * K,
                               standardize=False, t0_clock_min=t0_clock_min)

    @property
    def K(self) -> int:
        return len(self.times)

    def noise(self, k: int, t) -> np.ndarray:
        tk, vk = self.times[k], self.values[k]
        if len(tk) == 0:
            return np.zeros_like(np.asarray(t, dtype=float))
        raw = np.interp(t, tk, vk)
        return (raw - self.means[k]) / self.sds[k]


def harmonics(t, t0_clock_min: float = 0.0) -> np.ndarray:
    """The six diel harmonic columns, shape ``(len(t), 6)``."""
    tc = np.atleast_1d(np.asarray(t, dtype=float)) + t0_clock_min
    cols = []
    for period in HARMONIC_PERIODS:
        arg = 2.0 * np.pi * tc / period
        cols.append(np.sin(arg))
        cols.append(np.cos(arg))
    return np.stack(cols, axis=-1)


def design_matrix(k: int, t, covariates: CovariateSeries) -> np.ndarray:
    """Rows ``x_k(t)`` (noise followed by harmonics) for each time in ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    noise = np.atleast_1d(covariates.noise(k, t))
    return np.column_stack([noise, harmonics(t, covariates.t0_clock_min)])


def design_row(k: int, t: float, covariates: CovariateSeries) -> np.ndarray:
    return design_matrix(k, [t], covariates)[0]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition ``0 = p_0 < ... < p_M = T``."""

    horizon: float
    n_intervals: int

    @classmethod
    def from_spacing(cls, horizon: float, spacing: float = 20.0) -> "TimeGrid":
        if horizon <= 0 or spacing <= 0:
            raise ValidationError("horizon and grid spacing must be positive")
        M = max(1, int(round(horizon / spacing)))
        return cls(horizon=float(horizon), n_intervals=M)

    @property
    def spacing(self) -> float:
        return self.horizon / self.n_intervals

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_intervals + 1)

    @property
    def size(self) -> int:
        return self.n_intervals + 1

    def locate(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Cell index and fractional position of ``t`` within its cell."""
        t = np.asarray(t, dtype=float)
        x = t / self.spacing
        idx = np.clip(np.floor(x).astype(np.int64), 0, self.n_intervals - 1)
        return idx, x - idx


@dataclass
class ModelParams:
    """Every parameter of the intensity and its hierarchical prior.

    Blocks that a variant does not use are ``None``: ``delta``,
    ``delta_tilde``, ``tau_delta`` and ``w_grid`` without a GP term;
    ``alpha``, ``eta`` and ``phi`` without counter-calls. ``phi`` is also
    ``None`` for a single recorder.
    """

    beta: np.ndarray  # (N_COEF, K)
    beta_tilde: np.ndarray  # (N_COEF,)
    tau: np.ndarray  # (N_COEF,)
    delta: Optional[np.ndarray] = None
    delta_tilde: Optional[float] = None
    tau_delta: Optional[float] = None
    w_grid: Optional[np.ndarray] = None
    alpha: Optional[np.ndarray] = None
    eta: Optional[float] = None
    phi: Optional[float] = None

    @property
    def K(self) -> int:
        return self.beta.shape[1]

    @property
    def has_gp(self) -> bool:
        return self.w_grid is not None

    @property
    def has_cc(self) -> bool:
        return self.alpha is not None

    def copy(self) -> "ModelParams":
        kw = {}
        for f in fields(self):
            v = getattr(self, f.name)
            kw[f.name] = v.copy() if isinstance(v, np.ndarray) else v
        return replace(self, **kw)

    def validate(self, variant: Optional[ModelVariant] = None, grid: Optional[TimeGrid] = None) -> "ModelParams":
        K = self.K
        if self.beta.shape != (N_COEF, K):
            raise ValidationError(f"beta must have shape ({N_COEF}, K)")
        if self.beta_tilde.shape != (N_COEF,) or self.tau.shape != (N_COEF,):
            raise ValidationError("beta_tilde and tau need one entry per coefficient")
        if not np.all(np.isfinite(self.beta)) or not np.all(np.isfinite(self.beta_tilde)):
            raise ValidationError("beta must be finite")
        if np.any(~(self.tau > 0)):
            raise ValidationError("tau must be positive")
        if variant is not None and variant.has_gp != self.has_gp:
            raise ValidationError(f"GP block presence does not match variant {variant.value}")
        if variant is not None and variant.has_cc != self.has_cc:
            raise ValidationError(f"counter-call block presence does not match variant {variant.value}")
        if self.has_gp:
            if self.delta is None or self.delta.shape != (K,) or np.any(~(self.delta > 0)):
                raise ValidationError("delta must be positive with one entry per recorder")
            if self.tau_delta is None or not self.tau_delta > 0:
                raise ValidationError("tau_delta must be positive")
            if self.delta_tilde is None or not np.isfinite(self.delta_tilde):
                raise ValidationError("delta_tilde must be finite")
            if grid is not None and self.w_grid.shape != (grid.size,):
                raise ValidationError("w_grid length must match the time grid")
            if not np.all(np.isfinite(self.w_grid)):
                raise ValidationError("w_grid must be finite")
        if self.has_cc:
            if self.alpha.shape != (K,) or np.any(~(self.alpha >= 0)):
                raise ValidationError("alpha must be nonnegative with one entry per recorder")
            if self.eta is None or not self.eta > 0 or not np.isfinite(self.eta):
                raise ValidationError("eta must be positive")
            if K > 1 and (self.phi is None or not self.phi > 0 or not np.isfinite(self.phi)):
                raise ValidationError("phi must be positive")
        return self

    @property
    def phi_or_zero(self) -> float:
        return 0.0 if self.phi is None else float(self.phi)
