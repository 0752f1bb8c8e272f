"""Truncated generator matrices of the queue and their weighted forms.

Coordinates of the full system are ``(r, p_0, ..., p_{n-2})``; the reduced
second-approach systems drop ``r`` and use ``(p_0, ..., p_{n-1})``.  The
last retained level has its upward arrival flux removed, so FULL_A columns
sum to exactly zero.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, ModeMismatchError
from .rates import QueueModel

MIN_FULL_DIM = 3
MIN_QUEUE_DIM = 2


class Variant(str, enum.Enum):
    FULL_A = "FULL_A"
    REDUCED_A_STAR = "REDUCED_A_STAR"
    B_EQUAL = "B_EQUAL"
    B_GENERAL = "B_GENERAL"
    B_WEIGHTED = "B_WEIGHTED"


@dataclass(frozen=True)
class WeightSequence:
    """Positive weights d_0 = 1, d_1, ... : a finite prefix, then geometric growth."""

    prefix: tuple[float, ...]
    ratio: float
    kind: str = "explicit"
    eps: float | None = None

    def __post_init__(self):
        prefix = tuple(float(x) for x in self.prefix)
        object.__setattr__(self, "prefix", prefix)
        object.__setattr__(self, "ratio", float(self.ratio))
        if not prefix or prefix[0] != 1.0:
            raise ValueError("weights must start with d_0 = 1")
        if min(prefix) <= 0.0:
            raise ValueError("weights must be positive")
        if self.ratio < 1.0:
            raise ValueError("geometric tail ratio must be >= 1 (nondecreasing tail)")

    @classmethod
    def geometric(cls, eps: float) -> WeightSequence:
        return cls((1.0,), 1.0 + eps, "geometric", float(eps))

    @classmethod
    def geometric_gap(cls, eps: float) -> WeightSequence:
        return cls((1.0, eps), 1.0 + eps, "geometric_gap", float(eps))

    @classmethod
    def explicit(cls, prefix, ratio: float) -> WeightSequence:
        return cls(tuple(prefix), ratio, "explicit")

    @classmethod
    def unit(cls) -> WeightSequence:
        return cls.geometric(0.0)

    @property
    def tail_start(self) -> int:
        """First index i with d_{i+1} = ratio * d_i for every later index."""
        return len(self.prefix) - 1

    def d(self, i: int) -> float:
        if i < len(self.prefix):
            return self.prefix[i]
        return self.prefix[-1] * self.ratio ** (i - len(self.prefix) + 1)

    def values(self, n: int) -> np.ndarray:
        out = np.empty(n)
        m = min(n, len(self.prefix))
        out[:m] = self.prefix[:m]
        if n > m:
            out[m:] = self.prefix[-1] * self.ratio ** np.arange(1, n - m + 1)
        return out

    def to_dict(self) -> dict:
        if self.kind in ("geometric", "geometric_gap"):
            return {"kind": self.kind, "eps": self.eps}
        return {"kind": "explicit", "prefix": list(self.prefix), "ratio": self.ratio}

    @classmethod
    def from_dict(cls, d: dict) -> WeightSequence:
        kind = d.get("kind", "explicit")
        if kind == "geometric":
            return cls.geometric(d["eps"])
        if kind == "geometric_gap":
            return cls.geometric_gap(d["eps"])
        if kind == "explicit":
            return cls.explicit(d["prefix"], d["ratio"])
        raise ValueError(f"unknown weight kind {kind!r}")


@dataclass(frozen=True, eq=False)
class TruncatedSystem:
    """Finite section of a generator at a fixed time, with optional forcing.

    ``forcing_factor == "r"`` marks the equal-catastrophe reduced system,
    whose forcing is ``(eta(t) r(t), 0, ...)`` with r supplied by the caller.
    """

    variant: Variant
    t: float
    matrix: np.ndarray
    forcing: np.ndarray | None = None
    forcing_factor: str | None = None

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def first_state(self) -> str:
        return "r" if self.variant in (Variant.FULL_A, Variant.REDUCED_A_STAR) else "p0"

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write("# variant,t,n\n")
            fh.write(f"# {self.variant.value},{self.t!r},{self.n}\n")
            for row in self.matrix:
                fh.write(",".join(f"{x:.12g}" for x in row) + "\n")


class Bands(NamedTuple):
    """Banded storage: dense row 0 plus three diagonals (broadcast over leading time axes)."""

    row0: np.ndarray
    diag: np.ndarray
    sub: np.ndarray  # M[i+1, i]
    sup: np.ndarray  # M[i, i+1]

    def dense(self) -> np.ndarray:
        n = self.diag.shape[-1]
        out = np.zeros(self.diag.shape[:-1] + (n, n))
        idx = np.arange(n)
        out[..., idx, idx] = self.diag
        out[..., idx[1:], idx[:-1]] = self.sub
        out[..., idx[:-1], idx[1:]] = self.sup
        out[..., 0, :] = self.row0
        return out


def arrival_out(model: QueueModel, t, levels: int, closed: bool = True) -> np.ndarray:
    """Arrival intensity leaving each level 0..levels-1; zero at the top when closed."""
    t = np.asarray(t, dtype=float)
    lam = np.asarray(model.lam.value(t), dtype=float)[..., None]
    lb = lam * np.asarray(model.beta.value(t), dtype=float)[..., None]
    s = np.arange(levels)
    out = np.where(s < model.k, lam, lb) * np.ones(levels)
    if closed:
        out[..., -1] = 0.0
    return out


def _check_dim(n: int, minimum: int) -> None:
    if n < minimum:
        raise DimensionError(f"truncation dimension {n} is below the minimum {minimum}")


def a_bands(model: QueueModel, t, n: int, closed: bool = True) -> Bands:
    """Bands of the full generator on ``(r, p_0, ..., p_{n-2})``."""
    _check_dim(n, MIN_FULL_DIM)
    t = np.asarray(t, dtype=float)
    levels = n - 1
    eta = np.asarray(model.eta.value(t), dtype=float)
    mu = np.asarray(model.mu.value(t), dtype=float)[..., None]
    g = model.gammas.values(t, levels)
    lo = arrival_out(model, t, levels, closed)
    mu_out = mu * (np.arange(levels) > 0)

    row0 = np.empty(t.shape + (n,))
    row0[..., 0] = -eta
    row0[..., 1:] = g
    diag = np.empty(t.shape + (n,))
    diag[..., 0] = -eta
    diag[..., 1:] = -(lo + g + mu_out)
    sub = np.empty(t.shape + (n - 1,))
    sub[..., 0] = eta
    sub[..., 1:] = lo[..., :-1]
    sup = np.empty(t.shape + (n - 1,))
    sup[..., 0] = g[..., 0]
    sup[..., 1:] = mu
    return Bands(row0, diag, sub, sup)


def build_A(model: QueueModel, t: float, n: int, closed: bool = True) -> TruncatedSystem:
    """Transposed intensity matrix on the first ``n`` coordinates."""
    return TruncatedSystem(Variant.FULL_A, float(t), a_bands(model, t, n, closed).dense())


def build_A_star(model: QueueModel, t: float, n: int, closed: bool = True) -> TruncatedSystem:
    """Full generator with gamma*(t) removed from row 0, plus forcing (gamma*, 0, ...)."""
    m = a_bands(model, t, n, closed).dense()
    gs = float(model.gammas.infimum(t))
    m[0, :] -= gs
    forcing = np.zeros(n)
    forcing[0] = gs
    return TruncatedSystem(Variant.REDUCED_A_STAR, float(t), m, forcing)


def build_B(model: QueueModel, t: float, n: int, mode: str = "general", closed: bool = False) -> TruncatedSystem:
    """Queue-only generator on ``(p_0, ..., p_{n-1})``.

    ``mode="equal"`` needs identical catastrophe intensities and leaves the
    forcing as ``eta(t) * r(t)`` in the first coordinate.  ``mode="general"``
    eliminates r through ``r = 1 - sum p_i``.  ``closed`` removes the upward
    flux of the last level, matching :func:`build_A`.
    """
    _check_dim(n, MIN_QUEUE_DIM)
    mode = mode.lower()
    if mode not in ("equal", "general"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "equal" and not model.gammas.all_equal:
        raise ModeMismatchError("equal mode requires identical catastrophe intensities")
    t = float(t)
    eta = float(model.eta.value(t))
    mu = float(model.mu.value(t))
    g = model.gammas.values(t, n)
    lo = arrival_out(model, t, n, closed)
    mu_out = mu * (np.arange(n) > 0)

    m = np.zeros((n, n))
    idx = np.arange(n)
    m[idx, idx] = -(lo + g + mu_out)
    m[idx[1:], idx[:-1]] = lo[:-1]
    m[idx[:-1], idx[1:]] = mu
    forcing = np.zeros(n)
    forcing[0] = eta
    if mode == "equal":
        return TruncatedSystem(Variant.B_EQUAL, t, m, forcing, forcing_factor="r")
    m[0, 0] -= eta
    m[0, 1:] -= eta
    return TruncatedSystem(Variant.B_GENERAL, t, m, forcing)


def triangular_weight_matrix(w: WeightSequence, n: int) -> np.ndarray:
    """Upper-triangular matrix whose row i equals d_i from column i rightward."""
    d = w.values(n)
    return np.triu(np.repeat(d[:, None], n, axis=1))


def triangular_weight_inverse(w: WeightSequence, n: int) -> np.ndarray:
    d = w.values(n)
    inv = np.diag(1.0 / d)
    inv[np.arange(n - 1), np.arange(1, n)] = -1.0 / d[1:]
    return inv


def weight_transform(sys: TruncatedSystem, w: WeightSequence) -> TruncatedSystem:
    """Similarity transform by the triangular weight matrix.

    Evaluated in structured form: row tail-sums, then column differences,
    then diagonal scaling, which avoids forming the inverse.
    """
    if sys.variant not in (Variant.B_GENERAL, Variant.B_EQUAL):
        raise ModeMismatchError(f"weight_transform needs a reduced B system, got {sys.variant.value}")
    d = w.values(sys.n)
    tails = np.cumsum(sys.matrix[::-1], axis=0)[::-1]
    core = tails.copy()
    core[:, 1:] -= tails[:, :-1]
    bstar = d[:, None] * core / d[None, :]
    forcing = None
    if sys.forcing is not None:
        forcing = d * np.cumsum(sys.forcing[::-1])[::-1]
    return TruncatedSystem(Variant.B_WEIGHTED, sys.t, bstar, forcing, sys.forcing_factor)


def operator_norm_l1(m: np.ndarray) -> float:
    """Maximum absolute column sum."""
    return float(np.max(np.sum(np.abs(m), axis=0)))
