"""Fixed-step RK4 kernels for the full forward system.

Two interchangeable implementations: numba-compiled loops and a vectorised
numpy fallback.  Set ``CATQUEUE_DISABLE_NUMBA=1`` (or run without numba) to
select the fallback.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .rates import QueueModel, RateFunction

try:
    import numba as nb
except ImportError:  # pragma: no cover - exercised only without numba
    nb = None

NUMBA_AVAILABLE = nb is not None
USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("CATQUEUE_DISABLE_NUMBA", "").lower() not in ("1", "true", "yes")

# rate table rows
LAM, MU, BETA, ETA, TAIL = 0, 1, 2, 3, 4
FIRST_EXPLICIT = 5


def pack_model(model: QueueModel):
    """Flatten the model's rate functions into arrays consumable by the kernels."""
    rates: list[RateFunction] = [model.lam, model.mu, model.beta, model.eta, model.gammas.tail]
    rates += list(model.gammas.explicit)
    nh = max(1, max(len(r.harmonics) for r in rates))
    R = len(rates)
    a0 = np.zeros(R)
    freq = np.zeros((R, nh))
    sc = np.zeros((R, nh))
    cc = np.zeros((R, nh))
    lo = np.full(R, -np.inf)
    hi = np.full(R, np.inf)
    for i, r in enumerate(rates):
        a0[i] = r.a0
        for h, (j, b, c) in enumerate(r.harmonics):
            freq[i, h] = j
            sc[i, h] = b
            cc[i, h] = c
        if r.lower is not None:
            lo[i] = r.lower
        if r.upper is not None:
            hi[i] = r.upper
    return a0, freq, sc, cc, lo, hi


# ---------------------------------------------------------------- numpy path


def _rates_np(t, a0, freq, sc, cc, lo, hi):
    w = 2.0 * math.pi * freq * t
    v = a0 + np.sum(sc * np.sin(w) + cc * np.cos(w), axis=1)
    return np.minimum(np.maximum(v, lo), hi)


def _deriv_np(vals, k, x):
    n = x.shape[0]
    levels = n - 1
    lam, mu, beta, eta, tail = vals[LAM], vals[MU], vals[BETA], vals[ETA], vals[TAIL]
    m = vals.shape[0] - FIRST_EXPLICIT
    g = np.full(levels, tail)
    if m:
        g[: min(m, levels)] = vals[FIRST_EXPLICIT:FIRST_EXPLICIT + min(m, levels)]
    lo = np.where(np.arange(levels) < k, lam, lam * beta)
    lo[-1] = 0.0
    p = x[1:]
    out = np.empty(n)
    out[0] = -eta * x[0] + g @ p
    dp = -(lo + g) * p
    dp[1:] -= mu * p[1:]
    dp[:-1] += mu * p[1:]
    dp[1:] += lo[:-1] * p[:-1]
    dp[0] += eta * x[0]
    out[1:] = dp
    return out


def _rk4_np(a0, freq, sc, cc, lo, hi, k, x0, t0, h, nsteps, stride, keep_states):
    n = x0.shape[0]
    nout = nsteps // stride + 1
    states = np.empty((nout if keep_states else 0, n))
    chars = np.empty((nout, 3))
    levels = np.arange(n - 1, dtype=float)
    x = x0.astype(float).copy()
    worst_neg = 0.0
    worst_mass = 0.0

    def record(j):
        nonlocal worst_neg, worst_mass
        if keep_states:
            states[j] = x
        chars[j, 0] = max(x[0], 0.0)
        chars[j, 1] = max(x[1], 0.0)
        chars[j, 2] = levels @ np.maximum(x[1:], 0.0)
        worst_neg = min(worst_neg, x.min())
        worst_mass = max(worst_mass, abs(1.0 - x.sum()))

    record(0)
    j = 1
    for s in range(nsteps):
        t = t0 + s * h
        v0 = _rates_np(t, a0, freq, sc, cc, lo, hi)
        vh = _rates_np(t + 0.5 * h, a0, freq, sc, cc, lo, hi)
        v1 = _rates_np(t + h, a0, freq, sc, cc, lo, hi)
        k1 = _deriv_np(v0, k, x)
        k2 = _deriv_np(vh, k, x + 0.5 * h * k1)
        k3 = _deriv_np(vh, k, x + 0.5 * h * k2)
        k4 = _deriv_np(v1, k, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if (s + 1) % stride == 0:
            record(j)
            j += 1
    return states, chars, worst_neg, worst_mass


# ---------------------------------------------------------------- numba path

if NUMBA_AVAILABLE:

    @nb.njit(cache=True, nogil=True)
    def _rates_nb(t, a0, freq, sc, cc, lo, hi, out):
        for r in range(a0.shape[0]):
            v = a0[r]
            for q in range(freq.shape[1]):
                w = 2.0 * math.pi * freq[r, q] * t
                v += sc[r, q] * math.sin(w) + cc[r, q] * math.cos(w)
            if v < lo[r]:
                v = lo[r]
            if v > hi[r]:
                v = hi[r]
            out[r] = v

    @nb.njit(cache=True, nogil=True)
    def _deriv_nb(vals, k, x, out):
        n = x.shape[0]
        top = n - 2
        lam = vals[LAM]
        mu = vals[MU]
        lb = lam * vals[BETA]
        eta = vals[ETA]
        tail = vals[TAIL]
        m = vals.shape[0] - FIRST_EXPLICIT
        acc = -eta * x[0]
        prev_out = 0.0
        for s in range(top + 1):
            g = vals[FIRST_EXPLICIT + s] if s < m else tail
            p = x[s + 1]
            acc += g * p
            if s == top:
                a_out = 0.0
            elif s < k:
                a_out = lam
            else:
                a_out = lb
            d = -(a_out + g) * p
            if s > 0:
                d += prev_out * x[s] - mu * p
            else:
                d += eta * x[0]
            if s < top:
                d += mu * x[s + 2]
            out[s + 1] = d
            prev_out = a_out
        out[0] = acc

    @nb.njit(cache=True, nogil=True)
    def _rk4_nb(a0, freq, sc, cc, lo, hi, k, x0, t0, h, nsteps, stride, keep_states):
        n = x0.shape[0]
        R = a0.shape[0]
        nout = nsteps // stride + 1
        states = np.empty((nout if keep_states else 0, n))
        chars = np.empty((nout, 3))
        x = x0.copy()
        tmp = np.empty(n)
        k1 = np.empty(n)
        k2 = np.empty(n)
        k3 = np.empty(n)
        k4 = np.empty(n)
        v0 = np.empty(R)
        vh = np.empty(R)
        v1 = np.empty(R)
        worst_neg = 0.0
        worst_mass = 0.0
        j = 0
        for s in range(nsteps + 1):
            if s % stride == 0:
                if keep_states:
                    states[j, :] = x
                total = 0.0
                mean = 0.0
                for i in range(n):
                    total += x[i]
                    if x[i] < worst_neg:
                        worst_neg = x[i]
                    if i >= 2 and x[i] > 0.0:
                        mean += (i - 1) * x[i]
                chars[j, 0] = max(x[0], 0.0)
                chars[j, 1] = max(x[1], 0.0)
                chars[j, 2] = mean
                if abs(1.0 - total) > worst_mass:
                    worst_mass = abs(1.0 - total)
                j += 1
            if s == nsteps:
                break
            t = t0 + s * h
            _rates_nb(t, a0, freq, sc, cc, lo, hi, v0)
            _rates_nb(t + 0.5 * h, a0, freq, sc, cc, lo, hi, vh)
            _rates_nb(t + h, a0, freq, sc, cc, lo, hi, v1)
            _deriv_nb(v0, k, x, k1)
            for i in range(n):
                tmp[i] = x[i] + 0.5 * h * k1[i]
            _deriv_nb(vh, k, tmp, k2)
            for i in range(n):
                tmp[i] = x[i] + 0.5 * h * k2[i]
            _deriv_nb(vh, k, tmp, k3)
            for i in range(n):
                tmp[i] = x[i] + h * k3[i]
            _deriv_nb(v1, k, tmp, k4)
            for i in range(n):
                x[i] += (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        return states, chars, worst_neg, worst_mass


def rk4_full(packed, k, x0, t0, h, nsteps, stride, keep_states=True, use_numba=None):
    """Integrate the full system; returns (states, chars, min_coord, max_mass_defect).

    ``chars`` columns: r, p_0 and the mean, all computed from coordinates
    floored at zero.
    """
    if use_numba is None:
        use_numba = USE_NUMBA
    args = (*packed, int(k), np.ascontiguousarray(x0, dtype=float), float(t0), float(h), int(nsteps), int(stride), bool(keep_states))
    if use_numba:
        if not NUMBA_AVAILABLE:
            raise RuntimeError("numba is not installed")
        return _rk4_nb(*args)
    return _rk4_np(*args)


def deriv_full(packed, k, x, t, use_numba=None):
    """Right-hand side A(t) x of the full system (for tests and oracles)."""
    if use_numba is None:
        use_numba = USE_NUMBA
    x = np.ascontiguousarray(x, dtype=float)
    if use_numba:
        vals = np.empty(packed[0].shape[0])
        _rates_nb(float(t), *packed, vals)
        out = np.empty_like(x)
        _deriv_nb(vals, int(k), x, out)
        return out
    return _deriv_np(_rates_np(float(t), *packed), int(k), x)
