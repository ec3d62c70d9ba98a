"""Compiled O(nK) recursions for the exponential excitation kernel."""

import numpy as np
from numba import njit


@njit(cache=True)
def excitation(times, marks, alpha, eta, spatial):
    """``sum_{j<i} alpha[m_j] exp(-eta (t_i - t_j)) spatial[m_j, m_i]`` for every event ``i``."""
    n = times.size
    K = alpha.size
    state = np.zeros(K)  # per source recorder, decayed to the previous event
    out = np.empty(n)
    prev = 0.0
    for i in range(n):
        decay = np.exp(-eta * (times[i] - prev))
        acc = 0.0
        mi = marks[i]
        for l in range(K):
            state[l] *= decay
            acc += state[l] * spatial[l, mi]
        out[i] = acc
        state[mi] += alpha[mi]
        prev = times[i]
    return out


@njit(cache=True)
def decayed_mass(times, weights, eta):
    """``sum_{j<i} weights[j] exp(-eta (t_i - t_j))`` for every event ``i``."""
    n = times.size
    out = np.empty(n)
    s = 0.0
    prev = 0.0
    for i in range(n):
        s *= np.exp(-eta * (times[i] - prev))
        out[i] = s
        s += weights[i]
        prev = times[i]
    return out


@njit(cache=True)
def sample_parents(times, marks, alpha, eta, spatial, mu, excite, u):
    """Inverse-CDF draw of every branching label, scanning parents backwards in time.

    ``u`` holds one uniform per event. Label 0 is the background; label
    ``j`` points at event ``j - 1``.
    """
    n = times.size
    z = np.zeros(n, dtype=np.int64)
    for i in range(n):
        r = u[i] * (mu[i] + excite[i])
        if r < mu[i] or excite[i] <= 0.0:
            continue
        r -= mu[i]
        mi = marks[i]
        last = -1
        for j in range(i - 1, -1, -1):
            w = alpha[marks[j]] * np.exp(-eta * (times[i] - times[j])) * spatial[marks[j], mi]
            if w > 0.0:
                last = j
                if r < w:
                    break
                r -= w
        # rounding can exhaust the scan; the earliest positive-weight parent absorbs it
        if last >= 0:
            z[i] = last + 1
    return z


@njit(cache=True)
def excitation_by_source(times, marks, eta, spatial):
    """Unit-alpha excitation split by source recorder: row ``l`` holds ``sum_{j<i, m_j=l} exp(-eta lag) spatial[l, m_i]``."""
    n = times.size
    K = spatial.shape[0]
    state = np.zeros(K)
    out = np.empty((K, n))
    prev = 0.0
    for i in range(n):
        decay = np.exp(-eta * (times[i] - prev))
        mi = marks[i]
        for l in range(K):
            state[l] *= decay
            out[l, i] = state[l] * spatial[l, mi]
        state[mi] += 1.0
        prev = times[i]
    return out
