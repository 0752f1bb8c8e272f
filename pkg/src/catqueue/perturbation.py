"""Admissible perturbations of the queue and the resulting stability bounds."""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import NegativeRateError, PerturbationError
from .generator import WeightSequence, a_bands
from .lognorm import Envelope
from .rates import CatastropheFamily, QueueModel, RateFunction, rate_bound_L
from .transient import ProbabilityState, Trajectory, limiting_cycle

GRID = np.arange(4096) / 4096
SUP_TOL = 1e-12

PERTURBABLE = ("eta", "gamma", "lambda", "mu", "beta")


@dataclass(frozen=True)
class PerturbationSpec:
    """Deviation eps_hat * sin(2 pi frequency t) added to each listed rate.

    Rates that would leave their admissible range are clipped to it (beta
    to [0, 1], everything else to [0, inf)) when ``clamp`` is set.
    """

    eps_hat: float
    frequency: int = 3
    rates: tuple[str, ...] = PERTURBABLE
    clamp: bool = True

    def __post_init__(self):
        if not self.eps_hat >= 0.0:
            raise PerturbationError("eps_hat must be nonnegative")
        if int(self.frequency) != self.frequency or self.frequency < 1:
            raise PerturbationError("frequency must be a positive integer")
        object.__setattr__(self, "rates", tuple(self.rates))
        unknown = set(self.rates) - set(PERTURBABLE)
        if unknown:
            raise PerturbationError(f"unknown rates {sorted(unknown)}")

    def to_dict(self) -> dict:
        return {"eps_hat": self.eps_hat, "frequency": self.frequency, "rates": list(self.rates), "clamp": self.clamp}

    @classmethod
    def from_dict(cls, d: dict) -> PerturbationSpec:
        return cls(float(d["eps_hat"]), int(d.get("frequency", 3)), tuple(d.get("rates", PERTURBABLE)),
                   bool(d.get("clamp", True)))


def _shift(r: RateFunction, spec: PerturbationSpec, upper: float | None) -> RateFunction:
    harm = r.harmonics + ((spec.frequency, spec.eps_hat, 0.0),)
    lower, hi = r.lower, r.upper
    # clip only where the coefficient certificate cannot rule out leaving the range
    raw = RateFunction(r.a0, harm, lower=0.0).raw(GRID)
    needs_lower = r.a0 - r.coefficient_sum() - spec.eps_hat < 0.0
    needs_upper = upper is not None and r.a0 + r.coefficient_sum() + spec.eps_hat > upper
    if not spec.clamp and ((needs_lower and raw.min() < 0.0) or (needs_upper and raw.max() > upper)):
        raise NegativeRateError("perturbation leaves the admissible range and clamping is off")
    if needs_lower:
        lower = 0.0 if lower is None else max(lower, 0.0)
    if needs_upper:
        hi = upper if hi is None else min(hi, upper)
    return RateFunction(r.a0, harm, lower, hi)


def perturb(model: QueueModel, spec: PerturbationSpec) -> QueueModel:
    """Perturbed model of the same structure; checks the deviation bounds on a grid."""
    if spec.eps_hat == 0.0:
        return model

    def sh(name, r, upper=None):
        return _shift(r, spec, upper) if name in spec.rates else r

    gammas = model.gammas
    if "gamma" in spec.rates:
        gammas = CatastropheFamily(tuple(_shift(g, spec, None) for g in gammas.explicit), _shift(gammas.tail, spec, None))
    out = QueueModel(sh("lambda", model.lam), sh("mu", model.mu), sh("beta", model.beta, 1.0), sh("eta", model.eta),
                     gammas, model.k)
    _verify(model, out, spec.eps_hat)
    return out


def _verify(model: QueueModel, perturbed: QueueModel, eps_hat: float) -> None:
    pairs = list(zip(model.rates().values(), perturbed.rates().values()))
    pairs += list(zip(model.gammas.members(), perturbed.gammas.members()))
    for a, b in pairs:
        dev = float(np.max(np.abs(a.value(GRID) - b.value(GRID))))
        if dev > eps_hat + SUP_TOL:
            raise PerturbationError(f"rate deviation {dev:.3g} exceeds eps_hat {eps_hat:.3g}")
        if float(np.min(b.value(GRID))) < 0.0:
            raise NegativeRateError("perturbed rate is negative")
    L = rate_bound_L(model)
    prod = np.abs(model.lam.value(GRID) * model.beta.value(GRID) - perturbed.lam.value(GRID) * perturbed.beta.value(GRID))
    if float(prod.max()) > (L + 1.0) * eps_hat + SUP_TOL:
        raise PerturbationError("balking-flow deviation exceeds (L + 1) eps_hat")


def generator_deviation_norm(model: QueueModel, perturbed: QueueModel, t: float, n: int | None = None,
                             eps_hat: float | None = None) -> float:
    """Column-sum norm of A(t) - A_bar(t) over every distinct column type.

    With ``eps_hat`` given, raises PerturbationError if the value exceeds
    (2L + 6) eps_hat.
    """
    if perturbed.k != model.k or perturbed.gammas.m != model.gammas.m:
        raise PerturbationError("models differ in structure")
    if n is None:
        n = max(model.k, model.gammas.m) + 4
    a = a_bands(model, t, n, closed=False).dense()
    b = a_bands(perturbed, t, n, closed=False).dense()
    # the last column of an unclosed section misses its outflow target
    value = float(np.max(np.sum(np.abs(a - b), axis=0)[:-1]))
    if eps_hat is not None:
        cap = (2.0 * rate_bound_L(model) + 6.0) * eps_hat
        if value > cap * (1.0 + 1e-12) + 1e-15:
            raise PerturbationError(f"generator deviation {value:.6g} exceeds (2L + 6) eps_hat = {cap:.6g}")
    return value


class Theorem(str, enum.Enum):
    T4 = "T4"
    T5_PROB = "T5_PROB"
    T5_MEAN = "T5_MEAN"
    T6_PROB = "T6_PROB"
    T6_MEAN = "T6_MEAN"


@dataclass(frozen=True)
class BoundReport:
    theorem: Theorem
    eps_hat: float
    L: float
    N: float
    gamma0: float
    H: float | None
    W: float | None
    value: float
    valid: bool
    reference_value: float | None = None

    CSV_HEADER = "theorem,eps_hat,L,N,gamma0,H,W,value,valid,reference_value"

    def csv_row(self) -> str:
        def f(x):
            return "" if x is None else f"{x:.12g}"
        return ",".join([self.theorem.value, f(self.eps_hat), f(self.L), f(self.N), f(self.gamma0), f(self.H),
                         f(self.W), f(self.value), "true" if self.valid else "false", f(self.reference_value)])


def _positive(env: Envelope) -> None:
    if env.gamma0 <= 0.0 or env.N <= 0.0:
        raise ValueError("envelope constants must be positive")


def bound_T4(L: float, env: Envelope, eps_hat: float, reference: float | None = None) -> BoundReport:
    """l1 bound on the limiting state difference from the gamma* envelope.

    N is floored at 2, where the log term vanishes.
    """
    _positive(env)
    n_eff = max(env.N, 2.0)
    value = eps_hat * (2.0 * L + 6.0) * (1.0 + math.log(n_eff / 2.0)) / env.gamma0
    return BoundReport(Theorem.T4, eps_hat, L, env.N, env.gamma0, None, None, value, True, reference)


def bound_T5(L: float, env: Envelope, H: float, W: float, eps_hat: float,
             reference: float | None = None) -> tuple[BoundReport, BoundReport]:
    """Weighted state and mean bounds from the gamma** envelope; mean = prob / W."""
    _positive(env)
    c = (4.0 * L + 12.0) * eps_hat * H
    gap = env.gamma0 - c
    valid = gap > 0.0
    prob = c * L * env.N ** 2 / (env.gamma0 * gap) if valid else math.inf
    mean = prob / W if valid else math.inf
    ref_mean = None if reference is None else reference / W
    return (
        BoundReport(Theorem.T5_PROB, eps_hat, L, env.N, env.gamma0, H, W, prob, valid, reference),
        BoundReport(Theorem.T5_MEAN, eps_hat, L, env.N, env.gamma0, H, W, mean, valid, ref_mean),
    )


def bound_T6(L: float, env: Envelope, H: float, W: float, eps_hat: float, reference_prob: float | None = None,
             reference_mean: float | None = None) -> tuple[BoundReport, BoundReport]:
    """Triangular-weighted state and mean bounds from the gamma_B envelope."""
    _positive(env)
    N, g0 = env.N, env.gamma0
    gap = g0 - 12.0 * eps_hat * H * N * (L + 1.0)
    valid = gap > 0.0
    prob = eps_hat * N * (L + 1.0) * (6.0 * H * L * N + g0) / (g0 * gap) if valid else math.inf
    mean = prob / W if valid else math.inf
    return (
        BoundReport(Theorem.T6_PROB, eps_hat, L, N, g0, H, W, prob, valid, reference_prob),
        BoundReport(Theorem.T6_MEAN, eps_hat, L, N, g0, H, W, mean, valid, reference_mean),
    )


def max_admissible_eps(theorem: Theorem, L: float, env: Envelope, H: float) -> float:
    """Supremum of eps_hat for which the bound's denominator stays positive."""
    theorem = Theorem(theorem)
    if theorem is Theorem.T4:
        return math.inf
    if theorem in (Theorem.T5_PROB, Theorem.T5_MEAN):
        return env.gamma0 / ((4.0 * L + 12.0) * H)
    return env.gamma0 / (12.0 * H * env.N * (L + 1.0))


def state_distance(x: np.ndarray, y: np.ndarray, norm: str = "l1", weights: WeightSequence | None = None) -> np.ndarray:
    """Row-wise distance between full-layout states ``(r, p_0, ...)``.

    ``"l1"``: plain sum.  ``"diagonal"``: sum d_i |x_i - y_i| over the full
    vector.  ``"triangular"``: sum_i d_i |sum_{j >= i} (p_j - pbar_j)| over
    the queue coordinates.
    """
    diff = np.atleast_2d(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    if norm == "l1":
        out = np.abs(diff).sum(axis=1)
    elif norm in ("diagonal", "triangular"):
        if weights is None:
            raise ValueError(f"{norm} norm needs a weight sequence")
        if norm == "diagonal":
            out = np.abs(diff) @ weights.values(diff.shape[1])
        else:
            q = diff[:, 1:]
            tails = np.cumsum(q[:, ::-1], axis=1)[:, ::-1]
            out = np.abs(tails) @ weights.values(q.shape[1])
    else:
        raise ValueError(f"unknown norm {norm!r}")
    return out if np.ndim(x) > 1 else out[0]


def limiting_pair(model: QueueModel, perturbed: QueueModel, n: int, step: float, window: tuple[float, float],
                  keep_states: bool = True) -> tuple[Trajectory, Trajectory]:
    """Limiting cycles of both models from the empty state, integrated concurrently."""
    with ThreadPoolExecutor(max_workers=2) as pool:
        futs = [pool.submit(limiting_cycle, m, n, step, window, ProbabilityState.empty(n), keep_states=keep_states)
                for m in (model, perturbed)]
        return futs[0].result(), futs[1].result()


def empirical_limsup_diff(
    model: QueueModel,
    perturbed: QueueModel,
    n: int,
    step: float,
    window: tuple[float, float],
    norm: str = "l1",
    characteristic: str = "state",
    weights: WeightSequence | None = None,
    pair: tuple[Trajectory, Trajectory] | None = None,
) -> float:
    """Maximum over one limiting period of the requested distance."""
    base, pert = pair if pair is not None else limiting_pair(model, perturbed, n, step, window,
                                                             keep_states=characteristic == "state")
    if characteristic == "state":
        return float(np.max(state_distance(base.states, pert.states, norm, weights)))
    return float(np.max(np.abs(base.characteristic(characteristic) - pert.characteristic(characteristic))))
