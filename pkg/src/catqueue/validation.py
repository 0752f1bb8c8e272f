"""Empirical checks of the convergence and perturbation inequalities on integrated trajectories."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .generator import WeightSequence
from .lognorm import Convention, RateCurve, W_constant, curve_gamma_B, curve_gamma_double_star, curve_gamma_star
from .perturbation import state_distance
from .rates import QueueModel
from .transient import ProbabilityState, Trajectory, integrate_many

CONTRACTION_SLACK = 1e-6


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one inequality lhs(t) <= rhs(t) checked on a grid.

    ``worst_excess`` is max_t (lhs - rhs); the check passes when it does
    not exceed ``slack``.
    """

    name: str
    description: str
    lhs_max: float
    rhs_min: float
    worst_excess: float
    slack: float

    @property
    def passed(self) -> bool:
        return bool(self.worst_excess <= self.slack)

    CSV_HEADER = "check,description,lhs_max,rhs_min,worst_excess,slack,passed"

    def csv_row(self) -> str:
        return (f"{self.name},{self.description},{self.lhs_max:.6g},{self.rhs_min:.6g},"
                f"{self.worst_excess:.6g},{self.slack:.3g},{'pass' if self.passed else 'FAIL'}")


def compare(name: str, description: str, lhs, rhs, slack: float = 0.0) -> CheckResult:
    lhs = np.atleast_1d(np.asarray(lhs, dtype=float))
    rhs = np.broadcast_to(np.asarray(rhs, dtype=float), lhs.shape)
    return CheckResult(name, description, float(lhs.max()), float(rhs.min()), float(np.max(lhs - rhs)), slack)


def pair_from_levels(model: QueueModel, levels, t_end: float, n: int, step: float) -> dict[int, Trajectory]:
    """Trajectories started from unit mass at each queue level (server up), run concurrently."""
    levels = sorted(set(levels))
    trajs = integrate_many(model, [ProbabilityState.point_mass(j, n) for j in levels], t_end, n, step=step)
    return dict(zip(levels, trajs))


def decay(curve: RateCurve, grid: np.ndarray) -> np.ndarray:
    return np.exp(-curve.antiderivative(grid))


def check_uniform_contraction(model: QueueModel, trajs: dict[int, Trajectory], j: int,
                              slack: float = CONTRACTION_SLACK) -> CheckResult:
    """||p^0(t) - p^j(t)||_1 <= e^{-int gamma*} ||p^0(0) - p^j(0)||_1."""
    a, b = trajs[0], trajs[j]
    lhs = state_distance(a.states, b.states)
    rhs = decay(curve_gamma_star(model), a.grid) * lhs[0]
    return compare("contraction_l1", f"l1 contraction levels 0 vs {j}", lhs, rhs, slack)


def check_weighted_contraction(model: QueueModel, w: WeightSequence, trajs: dict[int, Trajectory], j: int,
                               curve: RateCurve | None = None, slack: float = CONTRACTION_SLACK) -> CheckResult:
    """Diagonal-weighted contraction at rate gamma**."""
    a, b = trajs[0], trajs[j]
    curve = curve or curve_gamma_double_star(model, w)
    lhs = state_distance(a.states, b.states, "diagonal", w)
    rhs = decay(curve, a.grid) * lhs[0]
    return compare("contraction_weighted", f"weighted contraction levels 0 vs {j}", lhs, rhs, slack)


def check_mean_convergence(model: QueueModel, w: WeightSequence, trajs: dict[int, Trajectory], j: int,
                           curve: RateCurve | None = None, slack: float = CONTRACTION_SLACK) -> CheckResult:
    """|E(t, j) - E(t, 0)| <= (d_{j+1} / W) e^{-int gamma**} with W = inf d_{k+1}/k."""
    a, b = trajs[0], trajs[j]
    curve = curve or curve_gamma_double_star(model, w)
    W = W_constant(w, Convention.SHIFTED)
    lhs = np.abs(b.mean - a.mean)
    rhs = w.d(j + 1) / W * decay(curve, a.grid)
    return compare("mean_weighted", f"mean convergence level {j}", lhs, rhs, slack)


def check_triangular_contraction(model: QueueModel, w: WeightSequence, trajs: dict[int, Trajectory], j: int,
                                 gamma0: float | None = None, slack: float = CONTRACTION_SLACK) -> CheckResult:
    """Triangular-weighted contraction of the queue coordinates.

    Uses e^{-int gamma_B} by default, or the constant envelope e^{-gamma0 t}.
    """
    a, b = trajs[0], trajs[j]
    lhs = state_distance(a.states, b.states, "triangular", w)
    if gamma0 is None:
        name, factor = "contraction_triangular", decay(curve_gamma_B(model, w), a.grid)
    else:
        name, factor = "contraction_triangular_envelope", np.exp(-gamma0 * a.grid)
    return compare(name, f"triangular contraction levels 0 vs {j}", lhs, factor * lhs[0], slack)


def check_triangular_mean(model: QueueModel, w: WeightSequence, trajs: dict[int, Trajectory], j: int,
                          gamma0: float | None = None, slack: float = CONTRACTION_SLACK) -> CheckResult:
    """|E(t, j) - E(t, 0)| <= ((1 + d_j) / W) e^{-...} with W = inf d_k/k."""
    a, b = trajs[0], trajs[j]
    W = W_constant(w, Convention.PLAIN)
    lhs = np.abs(b.mean - a.mean)
    if gamma0 is None:
        name, factor = "mean_triangular", decay(curve_gamma_B(model, w), a.grid)
    else:
        name, factor = "mean_triangular_envelope", np.exp(-gamma0 * a.grid)
    return compare(name, f"mean convergence level {j}", lhs, (1.0 + w.d(j)) / W * factor, slack)
