"""Logarithmic norms, contraction-rate curves and the constants derived from them.

Infima over the infinite state index are taken over an initial block of
columns plus two tail representatives.  Past the balking threshold, the
explicit catastrophe prefix and the weight prefix, every column expression
is either constant or monotone, and this is checked at runtime.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_simpson, quad
from scipy.interpolate import CubicHermiteSpline

from .errors import DimensionError, NotErgodicError
from .generator import WeightSequence, a_bands, arrival_out
from .rates import QueueModel

MEAN_PIECES = 64
CUMULATIVE_INTERVALS = 2 ** 14
ENVELOPE_MARGIN = 1e-7


class Verdict(str, enum.Enum):
    DIVERGES = "DIVERGES"
    FAILS = "FAILS"


class Convention(str, enum.Enum):
    SHIFTED = "SHIFTED"  # inf_k d_{k+1} / k
    PLAIN = "PLAIN"  # inf_k d_k / k


def log_norm_l1(m: np.ndarray) -> float:
    """Logarithmic norm induced by the l1 norm: max_i (m_ii + sum_{j != i} |m_ji|)."""
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        return 0.0
    diag = np.diagonal(m)
    return float(np.max(diag + np.sum(np.abs(m), axis=0) - np.abs(diag)))


def log_norm_weighted(m: np.ndarray, d: np.ndarray) -> float:
    """Logarithmic norm in the diagonally weighted l1 space (norm ||D x||_1)."""
    d = np.asarray(d, dtype=float)
    return log_norm_l1(d[:, None] * np.asarray(m) / d[None, :])


def _check_tail(margins: np.ndarray, monotone: bool) -> None:
    a, b = margins[..., -2], margins[..., -1]
    tol = 1e-9 * (1.0 + np.abs(a))
    if monotone:
        bad = b < a - tol
    else:
        bad = np.abs(b - a) > tol
    if np.any(bad):
        raise RuntimeError("tail column expressions are not homogeneous; enlarge the explicit block")


def _min_dim(n: int | None, needed: int) -> None:
    if n is not None and n < needed:
        raise DimensionError(f"dimension {n} does not reach the homogeneous tail (needs {needed})")


def a_star_tail_column(model: QueueModel, w: WeightSequence) -> int:
    return max(model.k + 1, model.gammas.m + 1, len(w.prefix))


def a_star_column_margins(model: QueueModel, w: WeightSequence, t, count: int) -> np.ndarray:
    """Weighted column margins |a*_ii| - sum_{j != i} (d_j / d_i) a*_ji for i < count."""
    t = np.asarray(t, dtype=float)
    b = a_bands(model, t, count + 1, closed=False)
    gs = np.asarray(model.gammas.infimum(t), dtype=float)[..., None]
    d = w.values(count + 1)
    diag = b.diag[..., :count].copy()
    diag[..., 0] -= gs[..., 0]
    sup = b.sup.copy()
    sup[..., 0] -= gs[..., 0]
    row0 = b.row0 - gs
    out = np.abs(diag)
    out[..., :] -= (d[1:count + 1] / d[:count]) * b.sub[..., :count]
    out[..., 1:] -= (d[:count - 1] / d[1:count]) * sup[..., :count - 1]
    if count > 2:
        out[..., 2:] -= (d[0] / d[2:count]) * row0[..., 2:count]
    return out


def gamma_double_star(model: QueueModel, w: WeightSequence, t, n: int | None = None):
    """Weighted contraction rate of the first approach at time(s) ``t``."""
    tail = a_star_tail_column(model, w)
    _min_dim(n, tail + 3)
    margins = a_star_column_margins(model, w, t, tail + 2)
    # row-0 terms (d_0/d_i)(gamma_i - gamma*) shrink along a nondecreasing tail
    _check_tail(margins, monotone=True)
    v = margins.min(axis=-1)
    return v if v.ndim else float(v)


def b_star_tail_column(model: QueueModel, w: WeightSequence) -> int:
    return max(model.k + 1, model.gammas.m + 1, len(w.prefix), 2)


def b_star_column_margins(model: QueueModel, w: WeightSequence, t, count: int, absolute: bool = False) -> np.ndarray:
    """Column expressions |b*_jj| - sum_{i != j} b*_ij of the weighted reduced matrix.

    ``absolute=True`` uses |b*_ij| for the off-diagonal entries, i.e. minus
    the l1 logarithmic norm of each column.
    """
    if count < 2:
        raise ValueError("need at least two columns")
    t = np.asarray(t, dtype=float)
    eta = np.asarray(model.eta.value(t), dtype=float)
    mu = np.asarray(model.mu.value(t), dtype=float)[..., None]
    g = model.gammas.values(t, count + 1)
    lo = arrival_out(model, t, count + 1, closed=False)
    d = w.values(count + 1)
    f = np.abs if absolute else (lambda x: x)

    out = np.empty(t.shape + (count,))
    out[..., 0] = eta + g[..., 0] - d[1] / d[0] * lo[..., 0]
    out[..., 1] = (lo[..., 0] + g[..., 1] + mu[..., 0]
                   - d[0] / d[1] * f(g[..., 0] - g[..., 1])
                   - d[2] / d[1] * lo[..., 1])
    if count > 2:
        j = np.arange(2, count)
        dg = g[..., j - 1] - g[..., j]
        head = np.cumsum(d)[j - 2]  # sum_{i <= j-2} d_i
        out[..., 2:] = (lo[..., j - 1] + g[..., j] + mu
                        - head / d[j] * f(dg)
                        - d[j - 1] / d[j] * f(mu + dg)
                        - d[j + 1] / d[j] * lo[..., j])
    return out


def gamma_B_rate(model: QueueModel, w: WeightSequence, t, n: int | None = None, absolute: bool = False):
    """Contraction rate of the second approach in the triangular-weighted norm."""
    tail = b_star_tail_column(model, w)
    _min_dim(n, tail + 3)
    margins = b_star_column_margins(model, w, t, tail + 2, absolute)
    _check_tail(margins, monotone=False)
    v = margins.min(axis=-1)
    return v if v.ndim else float(v)


class RateCurve:
    """A 1-periodic scalar rate with cached period mean and cumulative integral."""

    def __init__(self, func: Callable[[np.ndarray], np.ndarray], name: str = ""):
        self.func = func
        self.name = name

    def __call__(self, t):
        v = self.func(np.asarray(t, dtype=float))
        return v if np.ndim(v) else float(v)

    @cached_property
    def mean_over_period(self) -> float:
        # adaptive: rates built from max/min have kinks that cost fixed rules accuracy
        # pieces isolate the kinks so each quad call converges at the requested tolerance
        edges = np.linspace(0.0, 1.0, MEAN_PIECES + 1)
        f = lambda t: float(self.func(np.asarray(t)))  # noqa: E731
        return float(sum(quad(f, a, b, limit=200, epsabs=1e-13, epsrel=1e-12)[0] for a, b in zip(edges[:-1], edges[1:])))

    @cached_property
    def _cumulative(self) -> tuple[np.ndarray, np.ndarray, CubicHermiteSpline]:
        tt = np.linspace(0.0, 1.0, CUMULATIVE_INTERVALS + 1)
        vals = np.asarray(self.func(tt), dtype=float)
        cum = cumulative_simpson(vals, x=tt, initial=0.0)
        return tt, cum, CubicHermiteSpline(tt, cum, vals)

    def period_integral(self) -> float:
        return float(self._cumulative[1][-1])

    def integral(self, s, t):
        """Integral over [s, t] (vectorised), using periodicity."""
        return self.antiderivative(t) - self.antiderivative(s)

    def antiderivative(self, t):
        _, cum, spline = self._cumulative
        t = np.asarray(t, dtype=float)
        whole = np.floor(t)
        v = whole * cum[-1] + spline(t - whole)
        return v if v.ndim else float(v)

    def to_csv(self, path, points: int = 101) -> None:
        tt = np.linspace(0.0, 1.0, points)
        vals = np.asarray(self.func(tt), dtype=float)
        with open(path, "w", newline="\n") as fh:
            fh.write("t,value\n")
            for a, b in zip(tt, vals):
                fh.write(f"{a:.12g},{b:.12g}\n")


def curve_gamma_star(model: QueueModel) -> RateCurve:
    return RateCurve(lambda t: model.gammas.infimum(t), "gamma_star")


def curve_gamma_double_star(model: QueueModel, w: WeightSequence) -> RateCurve:
    return RateCurve(lambda t: gamma_double_star(model, w, t), "gamma_double_star")


def curve_gamma_B(model: QueueModel, w: WeightSequence, absolute: bool = False) -> RateCurve:
    return RateCurve(lambda t: gamma_B_rate(model, w, t, absolute=absolute), "gamma_B")


def curve_explicit_weighted(model: QueueModel, eps: float) -> RateCurve:
    """gamma*(t) - eps * max(eta(t), lambda(t)), the explicit geometric-weight rate."""
    return RateCurve(
        lambda t: model.gammas.infimum(t) - eps * np.maximum(model.eta.value(t), model.lam.value(t)),
        "gamma_eps",
    )


def check_divergence(rate: RateCurve) -> Verdict:
    """Whether the integral of a periodic rate over [0, inf) diverges to +inf."""
    return Verdict.DIVERGES if rate.mean_over_period > 0.0 else Verdict.FAILS


@dataclass(frozen=True)
class Envelope:
    """exp(-int_s^t rate) <= N exp(-gamma0 (t - s))."""

    N: float
    gamma0: float

    def __call__(self, elapsed):
        return self.N * np.exp(-self.gamma0 * np.asarray(elapsed, dtype=float))


def fit_envelope(rate: RateCurve) -> Envelope:
    """Tightest envelope with gamma0 equal to the period mean.

    N = exp(max Phi - min Phi) where Phi is the periodic antiderivative of
    rate - gamma0, plus a small margin for quadrature error.
    """
    gamma0 = rate.mean_over_period
    if gamma0 <= 0.0:
        raise NotErgodicError(f"period mean {gamma0:.6g} of {rate.name or 'rate'} is not positive")
    tt, cum, _ = rate._cumulative
    phi = cum - gamma0 * tt
    spread = float(phi.max() - phi.min())
    return Envelope(math.exp(spread + ENVELOPE_MARGIN), gamma0)


def floor_envelope(rate: RateCurve, points: int = 4096) -> Envelope:
    """Envelope with N = 1 and gamma0 = sampled minimum of the rate."""
    tt = np.linspace(0.0, 1.0, points + 1)
    lo = float(np.min(rate(tt)))
    if lo <= 0.0:
        raise NotErgodicError(f"minimum {lo:.6g} of {rate.name or 'rate'} is not positive")
    return Envelope(1.0, lo)


def W_constant(w: WeightSequence, convention: Convention | str = Convention.SHIFTED) -> float:
    """inf_{k >= 1} d_{k+1}/k (SHIFTED) or d_k/k (PLAIN).

    Returns 0.0 when the infimum is not positive (bounded weights).
    """
    convention = Convention(convention)
    q = w.ratio
    if q <= 1.0:
        return 0.0
    shift = 1 if convention is Convention.SHIFTED else 0
    # beyond k >= 1/(q-1) inside the geometric tail, d_{k+s}/k increases
    last = max(len(w.prefix) + 1, math.ceil(1.0 / (q - 1.0))) + 1
    ks = np.arange(1, last + 1)
    d = w.values(last + 2)
    return float(np.min(d[ks + shift] / ks))


def H_constant(w: WeightSequence, n_scan: int | None = None) -> float:
    """sup over neighbouring indices of d_i / d_j."""
    n = max(len(w.prefix) + 2, n_scan or 0)
    d = w.values(n)
    r = d[1:] / d[:-1]
    return float(max(np.max(r), np.max(1.0 / r), w.ratio, 1.0 / w.ratio))
