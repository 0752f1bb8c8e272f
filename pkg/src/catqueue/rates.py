"""Time-varying intensities of the queue and their global bounds.

Every intensity is a 1-periodic trigonometric polynomial

    value(t) = a0 + sum_j (b_j sin(2 pi j t) + c_j cos(2 pi j t)),

optionally clipped to ``[lower, upper]`` (clipping is only introduced by
perturbation schemes that must keep a rate admissible).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import NegativeRateError

GRID_POINTS = 10_000
NEG_TOL = -1e-12
TWO_PI = 2.0 * math.pi

_GRID = np.arange(GRID_POINTS) / GRID_POINTS


@dataclass(frozen=True)
class RateFunction:
    """Nonnegative 1-periodic trigonometric polynomial.

    ``harmonics`` holds ``(j, sin_coef, cos_coef)`` triples with ``j >= 1``.
    """

    a0: float
    harmonics: tuple[tuple[int, float, float], ...] = ()
    lower: float | None = None
    upper: float | None = None

    def __post_init__(self):
        harm = []
        for h in self.harmonics:
            j, b, c = h
            if int(j) != j or j < 1:
                raise ValueError(f"harmonic index must be a positive integer, got {j!r}")
            harm.append((int(j), float(b), float(c)))
        object.__setattr__(self, "a0", float(self.a0))
        object.__setattr__(self, "harmonics", tuple(harm))
        if self.lower is not None:
            object.__setattr__(self, "lower", float(self.lower))
        if self.upper is not None:
            object.__setattr__(self, "upper", float(self.upper))
        # the coefficient certificate makes the grid check redundant
        if self.certified_min() >= 0.0:
            return
        lo = float(np.min(self.value(_GRID)))
        if lo < NEG_TOL:
            raise NegativeRateError(f"rate takes the negative value {lo:.3g} on [0, 1)")

    @classmethod
    def constant(cls, c: float) -> RateFunction:
        return cls(float(c))

    @property
    def is_constant(self) -> bool:
        return all(b == 0.0 and c == 0.0 for _, b, c in self.harmonics)

    @property
    def is_clipped(self) -> bool:
        return self.lower is not None or self.upper is not None

    def raw(self, t):
        """Polynomial value before clipping."""
        t = np.asarray(t, dtype=float)
        v = np.full(t.shape, self.a0)
        for j, b, c in self.harmonics:
            w = TWO_PI * j * t
            if b:
                v = v + b * np.sin(w)
            if c:
                v = v + c * np.cos(w)
        return v if v.ndim else float(v)

    def value(self, t):
        v = self.raw(t)
        if self.is_clipped:
            lo = -np.inf if self.lower is None else self.lower
            hi = np.inf if self.upper is None else self.upper
            v = np.clip(v, lo, hi)
            return v if np.ndim(v) else float(v)
        return v

    __call__ = value

    def coefficient_sum(self) -> float:
        return sum(abs(b) + abs(c) for _, b, c in self.harmonics)

    def certified_min(self) -> float:
        lo = self.a0 - self.coefficient_sum()
        if self.lower is not None:
            lo = max(lo, self.lower)
        return lo

    def certified_max(self) -> float:
        """Upper bound on sup_t value(t) that holds without sampling."""
        hi = self.a0 + self.coefficient_sum()
        if self.upper is not None:
            hi = min(hi, self.upper)
        if self.lower is not None:
            hi = max(hi, self.lower)
        return hi

    def antiderivative(self, t):
        """Exact primitive F with F(0) = 0 (unclipped rates only)."""
        if self.is_clipped:
            raise ValueError("clipped rates have no closed-form antiderivative")
        t = np.asarray(t, dtype=float)
        v = self.a0 * t
        for j, b, c in self.harmonics:
            w = TWO_PI * j
            v = v + b * (1.0 - np.cos(w * t)) / w + c * np.sin(w * t) / w
        return v if v.ndim else float(v)

    def integral(self, s: float, t: float) -> float:
        """Integral of the rate over [s, t]."""
        if not self.is_clipped:
            return self.antiderivative(t) - self.antiderivative(s)
        from scipy.integrate import quad

        return quad(self.value, s, t, limit=200, epsabs=1e-13, epsrel=1e-12)[0]

    def mean(self) -> float:
        if not self.is_clipped:
            return self.a0
        return self.integral(0.0, 1.0)

    def __add__(self, other: RateFunction) -> RateFunction:
        if self.is_clipped or other.is_clipped:
            raise ValueError("cannot add clipped rate functions symbolically")
        coef: dict[int, list[float]] = {}
        for j, b, c in self.harmonics + other.harmonics:
            acc = coef.setdefault(j, [0.0, 0.0])
            acc[0] += b
            acc[1] += c
        harm = tuple((j, b, c) for j, (b, c) in sorted(coef.items()))
        return RateFunction(self.a0 + other.a0, harm)

    def to_dict(self) -> dict:
        d: dict = {
            "a0": self.a0,
            "harmonics": [{"j": j, "sin": b, "cos": c} for j, b, c in self.harmonics],
        }
        if self.lower is not None:
            d["lower"] = self.lower
        if self.upper is not None:
            d["upper"] = self.upper
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RateFunction:
        harm = tuple((h["j"], h.get("sin", 0.0), h.get("cos", 0.0)) for h in d.get("harmonics", ()))
        return cls(d["a0"], harm, d.get("lower"), d.get("upper"))


def trig(a0: float, sin: float = 0.0, cos: float = 0.0, j: int = 1) -> RateFunction:
    """Shorthand for ``a0 + sin*sin(2 pi j t) + cos*cos(2 pi j t)``."""
    if sin == 0.0 and cos == 0.0:
        return RateFunction(a0)
    return RateFunction(a0, ((j, sin, cos),))


@dataclass(frozen=True)
class CatastropheFamily:
    """Catastrophe intensities gamma_0 .. gamma_{m-1} followed by a common tail."""

    explicit: tuple[RateFunction, ...]
    tail: RateFunction

    def __post_init__(self):
        object.__setattr__(self, "explicit", tuple(self.explicit))

    @classmethod
    def uniform(cls, rate: RateFunction) -> CatastropheFamily:
        return cls((), rate)

    @property
    def m(self) -> int:
        return len(self.explicit)

    @property
    def all_equal(self) -> bool:
        return all(g == self.tail for g in self.explicit)

    def rate(self, n: int) -> RateFunction:
        return self.explicit[n] if n < self.m else self.tail

    def members(self) -> tuple[RateFunction, ...]:
        return self.explicit + (self.tail,)

    def values(self, t, count: int) -> np.ndarray:
        """gamma_0(t) .. gamma_{count-1}(t); shape ``np.shape(t) + (count,)``."""
        t = np.asarray(t, dtype=float)
        out = np.empty(t.shape + (count,))
        for n in range(min(self.m, count)):
            out[..., n] = self.explicit[n].value(t)
        if count > self.m:
            out[..., self.m:] = np.asarray(self.tail.value(t))[..., None]
        return out

    def infimum(self, t):
        vals = np.stack([np.asarray(g.value(t), dtype=float) for g in self.members()])
        v = vals.min(axis=0)
        return v if v.ndim else float(v)


@dataclass(frozen=True)
class QueueModel:
    """M_t/M_t/1 queue with balking above threshold ``k``, catastrophes and repairs."""

    lam: RateFunction
    mu: RateFunction
    beta: RateFunction
    eta: RateFunction
    gammas: CatastropheFamily
    k: int

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"balking threshold k must be a positive integer, got {self.k!r}")
        object.__setattr__(self, "k", int(self.k))
        if self.beta.certified_max() > 1.0:
            hi = float(np.max(self.beta.value(_GRID)))
            if hi > 1.0 + 1e-12:
                raise NegativeRateError(f"balking probability exceeds 1 (max {hi:.6g})")

    def rates(self) -> dict[str, RateFunction]:
        return {"lambda": self.lam, "mu": self.mu, "beta": self.beta, "eta": self.eta}

    @property
    def all_constant(self) -> bool:
        return all(r.is_constant for r in (self.lam, self.mu, self.beta, self.eta)) and all(
            g.is_constant for g in self.gammas.members()
        )


def eval_rate(r: RateFunction, t):
    """Value of ``r`` at time ``t`` (scalar or array)."""
    return r.value(t)


def gamma_star(model: QueueModel, t):
    """Pointwise infimum of the catastrophe intensities."""
    return model.gammas.infimum(t)


def _diagonal_families(model: QueueModel) -> Iterable[tuple[str, int]]:
    """(kind, n) pairs that cover every distinct diagonal entry of the generator."""
    yield ("repair", -1)
    top = max(model.gammas.m, model.k) + 1
    for n in range(top):
        if n == 0:
            yield ("empty", 0)
        elif n < model.k:
            yield ("join", n)
        else:
            yield ("balk", n)


def _family_value(model: QueueModel, kind: str, n: int, t):
    if kind == "repair":
        return model.eta.value(t)
    g = model.gammas.rate(n).value(t)
    lam = model.lam.value(t)
    if kind == "empty":
        return lam + g
    if kind == "join":
        return lam + g + model.mu.value(t)
    return lam * model.beta.value(t) + g + model.mu.value(t)


def _certified_sum(*rs: RateFunction) -> float:
    plain = [r for r in rs if not r.is_clipped]
    total = 0.0
    if plain:
        acc = plain[0]
        for r in plain[1:]:
            acc = acc + r
        total += acc.certified_max()
    total += sum(r.certified_max() for r in rs if r.is_clipped)
    return total


def _family_certificate(model: QueueModel, kind: str, n: int) -> float:
    if kind == "repair":
        return model.eta.certified_max()
    g = model.gammas.rate(n)
    if kind == "empty":
        return _certified_sum(model.lam, g)
    if kind == "join":
        return _certified_sum(model.lam, g, model.mu)
    return model.lam.certified_max() * model.beta.certified_max() + _certified_sum(g, model.mu)


def rate_bound_L(model: QueueModel, certified: bool = True) -> float:
    """Bound L on sup_{t,i} |a_ii(t)|.

    With ``certified=True`` (default) the bound comes from coefficient sums
    and holds for every t; otherwise the dense-grid maximum is returned.
    """
    best = 0.0
    for kind, n in _diagonal_families(model):
        if certified:
            v = _family_certificate(model, kind, n)
        else:
            v = float(np.max(_family_value(model, kind, n, _GRID)))
        best = max(best, v)
    return best


def example1_model(k: int = 100) -> QueueModel:
    """Sinusoidal rates with identical catastrophe intensities for every level."""
    return QueueModel(
        lam=trig(10.0, sin=10.0),
        mu=trig(2.0, cos=1.0),
        beta=RateFunction.constant(0.7),
        eta=trig(3.0, sin=1.0),
        gammas=CatastropheFamily.uniform(trig(2.0, cos=0.5)),
        k=k,
    )


def example2_model(k: int = 100) -> QueueModel:
    """Catastrophes only from the empty queue; light traffic with fast service."""
    return QueueModel(
        lam=trig(1.0, sin=1.0),
        mu=trig(5.0, cos=1.0),
        beta=RateFunction.constant(0.7),
        eta=trig(3.0, sin=1.0),
        gammas=CatastropheFamily((trig(2.0, cos=0.5),), RateFunction.constant(0.0)),
        k=k,
    )


def constant_model(
    lam: float, mu: float, eta: float, gamma: float | Sequence[float], beta: float = 1.0, k: int = 1,
    gamma_tail: float | None = None,
) -> QueueModel:
    """Time-homogeneous model; ``gamma`` may list explicit level rates."""
    if isinstance(gamma, (int, float)):
        fam = CatastropheFamily.uniform(RateFunction.constant(gamma))
    else:
        tail = gamma[-1] if gamma_tail is None else gamma_tail
        fam = CatastropheFamily(tuple(RateFunction.constant(g) for g in gamma), RateFunction.constant(tail))
    return QueueModel(
        RateFunction.constant(lam), RateFunction.constant(mu), RateFunction.constant(beta),
        RateFunction.constant(eta), fam, k,
    )
