"""Transient solution of the truncated forward equations and independent oracles."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad

from . import _kernels
from .errors import (
    BudgetExceededError,
    DimensionError,
    IntegrationError,
    ModeMismatchError,
    NotConvergedError,
    SingularSystemError,
    StepTooLargeError,
)
from .generator import Variant, build_A, build_A_star, build_B
from .rates import QueueModel, rate_bound_L

NEG_FLOOR = -1e-10
MASS_TOL = 1e-8
OUTPUT_DT = 0.01
PERIODICITY_TOL = 1e-5
REFINE_TOL = 1e-6
REFINE_BUDGET = 2 ** 14


@dataclass(eq=False)
class ProbabilityState:
    """Distribution (r, p_0, ..., p_{n-2}) of the truncated process."""

    r: float
    p: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate(([self.r], self.p))

    @property
    def n(self) -> int:
        return self.p.size + 1

    @classmethod
    def from_vector(cls, x) -> ProbabilityState:
        x = np.asarray(x, dtype=float)
        return cls(float(x[0]), x[1:].copy())

    @classmethod
    def point_mass(cls, level: int, n: int) -> ProbabilityState:
        """All mass on queue length ``level`` with the server up."""
        if not 0 <= level <= n - 2:
            raise DimensionError(f"level {level} outside truncation of dimension {n}")
        p = np.zeros(n - 1)
        p[level] = 1.0
        return cls(0.0, p)

    @classmethod
    def empty(cls, n: int) -> ProbabilityState:
        return cls.point_mass(0, n)

    def check(self, tol: float = MASS_TOL) -> None:
        x = self.vector
        if x.min() < NEG_FLOOR or abs(1.0 - x.sum()) > tol:
            raise ValueError("state is not on the probability simplex")


@dataclass(eq=False)
class Trajectory:
    grid: np.ndarray
    r: np.ndarray
    empty_prob: np.ndarray
    mean: np.ndarray
    states: np.ndarray | None = None
    periodicity_defect: float | None = None

    CHARACTERISTICS = ("empty_prob", "mean", "r")

    @classmethod
    def from_states(cls, grid, states, layout: str = "full") -> Trajectory:
        """Derived characteristics from raw states (``layout`` "full" or "queue")."""
        states = np.asarray(states, dtype=float)
        if layout == "queue":
            states = np.concatenate((1.0 - states.sum(axis=1, keepdims=True), states), axis=1)
        elif layout != "full":
            raise ValueError(f"unknown layout {layout!r}")
        pos = np.maximum(states, 0.0)
        levels = np.arange(states.shape[1] - 1)
        return cls(np.asarray(grid, dtype=float), pos[:, 0], pos[:, 1], pos[:, 1:] @ levels, states)

    def characteristic(self, name: str) -> np.ndarray:
        if name not in self.CHARACTERISTICS:
            raise KeyError(name)
        return getattr(self, name)

    def index_of(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.grid - t)))
        if abs(self.grid[i] - t) > 1e-9:
            raise ValueError(f"t={t} is not on the output grid")
        return i

    def window(self, t_a: float, t_b: float) -> Trajectory:
        i, j = self.index_of(t_a), self.index_of(t_b) + 1
        states = None if self.states is None else self.states[i:j]
        return replace(self, grid=self.grid[i:j], r=self.r[i:j], empty_prob=self.empty_prob[i:j],
                       mean=self.mean[i:j], states=states)

    def state(self, i: int) -> ProbabilityState:
        if self.states is None:
            raise ValueError("trajectory was integrated without keeping states")
        return ProbabilityState.from_vector(self.states[i])

    def to_csv(self, path, p_cutoff: int | None = None) -> None:
        if self.states is None:
            raise ValueError("trajectory was integrated without keeping states")
        levels = self.states.shape[1] - 1
        top = levels if p_cutoff is None else min(levels, p_cutoff + 1)
        header = ["t", "r"] + [f"p{i}" for i in range(top)] + ["empty_prob", "mean"]
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for i, t in enumerate(self.grid):
                row = [t, self.states[i, 0], *self.states[i, 1:top + 1], self.empty_prob[i], self.mean[i]]
                fh.write(",".join(f"{x:.12g}" for x in row) + "\n")


def _step_count(span: float, step: float, what: str) -> int:
    k = round(span / step)
    if k < 0 or abs(k * step - span) > 1e-9 * max(1.0, span):
        raise ValueError(f"{what}={span} is not a whole number of steps of size {step}")
    return int(k)


def check_step(step: float, L: float) -> None:
    if step <= 0.0:
        raise StepTooLargeError("step must be positive")
    if L > 0.0 and step > 1.0 / (4.0 * L):
        raise StepTooLargeError(f"step {step} exceeds 1/(4L) = {1.0 / (4.0 * L):.6g}")


def integrate(
    model: QueueModel,
    initial: ProbabilityState,
    t_end: float,
    n: int,
    step: float = 1e-3,
    output_dt: float = OUTPUT_DT,
    keep_states: bool = True,
    use_numba: bool | None = None,
) -> Trajectory:
    """Fixed-step classical RK4 on the conservatively closed truncation.

    The generator is re-evaluated at every stage time.  Output is sampled
    every ``output_dt``.  Raises IntegrationError if a coordinate drops below
    -1e-10 or total mass drifts by more than 1e-8.
    """
    if n < model.k + 3:
        raise DimensionError(f"truncation {n} must be at least k + 3 = {model.k + 3}")
    if initial.n != n:
        raise DimensionError(f"initial state has dimension {initial.n}, expected {n}")
    initial.check()
    check_step(step, rate_bound_L(model))
    nsteps = _step_count(t_end, step, "t_end")
    stride = _step_count(output_dt, step, "output_dt")
    if stride == 0 or nsteps % stride:
        raise ValueError("t_end must be a multiple of output_dt")
    states, chars, worst_neg, worst_mass = _kernels.rk4_full(
        _kernels.pack_model(model), model.k, initial.vector, 0.0, step, nsteps, stride, keep_states, use_numba
    )
    if worst_neg < NEG_FLOOR:
        raise IntegrationError(f"coordinate reached {worst_neg:.3g}")
    if worst_mass > MASS_TOL:
        raise IntegrationError(f"probability mass drifted by {worst_mass:.3g}")
    grid = np.arange(chars.shape[0]) * (stride * step)
    return Trajectory(grid, chars[:, 0], chars[:, 1], chars[:, 2], states if keep_states else None)


def integrate_many(model: QueueModel, initials: Sequence[ProbabilityState], t_end: float, n: int, **kw) -> list[Trajectory]:
    """Integrate several initial states concurrently; results keep input order."""
    with ThreadPoolExecutor(max_workers=max(1, len(initials))) as pool:
        futures = [pool.submit(integrate, model, x0, t_end, n, **kw) for x0 in initials]
        return [f.result() for f in futures]


def integrate_inhomogeneous(
    sys_builder: Callable[[float], np.ndarray],
    forcing_builder: Callable[[float], np.ndarray] | None,
    z0,
    t_end: float,
    step: float,
    output_dt: float = OUTPUT_DT,
    layout: str = "queue",
    L: float | None = None,
) -> Trajectory:
    """Dense RK4 for dz/dt = M(t) z + f(t).

    ``sys_builder`` may return an ndarray or a TruncatedSystem.  With
    ``layout="queue"`` the repair probability is reconstructed as
    ``1 - sum(z)``.
    """

    def mat(t):
        m = sys_builder(t)
        return getattr(m, "matrix", m)

    def rhs(t, z):
        out = mat(t) @ z
        if forcing_builder is not None:
            out = out + forcing_builder(t)
        return out

    if L is None:
        L = float(np.max(np.abs(np.diagonal(mat(0.0)))))
    check_step(step, L)
    nsteps = _step_count(t_end, step, "t_end")
    stride = _step_count(output_dt, step, "output_dt")
    z = np.asarray(z0, dtype=float).copy()
    out = [z.copy()]
    for s in range(nsteps):
        t = s * step
        k1 = rhs(t, z)
        k2 = rhs(t + 0.5 * step, z + 0.5 * step * k1)
        k3 = rhs(t + 0.5 * step, z + 0.5 * step * k2)
        k4 = rhs(t + step, z + step * k3)
        z = z + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if (s + 1) % stride == 0:
            out.append(z.copy())
    grid = np.arange(len(out)) * (stride * step)
    return Trajectory.from_states(grid, np.array(out), layout)


def integrate_reduced(
    model: QueueModel,
    variant: Variant,
    initial: ProbabilityState,
    t_end: float,
    n: int,
    step: float = 1e-3,
    output_dt: float = OUTPUT_DT,
) -> Trajectory:
    """Integrate one of the reduced formulations; the result uses the full layout."""
    L = rate_bound_L(model)
    if variant is Variant.REDUCED_A_STAR:
        def forcing(t):
            f = np.zeros(n)
            f[0] = model.gammas.infimum(t)
            return f
        return integrate_inhomogeneous(lambda t: build_A_star(model, t, n).matrix, forcing, initial.vector,
                                       t_end, step, output_dt, layout="full", L=L)
    if variant is Variant.B_GENERAL:
        def forcing(t):
            f = np.zeros(n - 1)
            f[0] = model.eta.value(t)
            return f
        return integrate_inhomogeneous(lambda t: build_B(model, t, n - 1, "general", closed=True).matrix,
                                       forcing, initial.p, t_end, step, output_dt, layout="queue", L=L)
    if variant is Variant.B_EQUAL:
        if initial.r != 0.0:
            raise ValueError("the closed-form repair probability assumes r(0) = 0")
        cache: dict[float, float] = {}

        def forcing(t):
            if t not in cache:
                cache[t] = repair_prob_closed_form(model, t)
            f = np.zeros(n - 1)
            f[0] = model.eta.value(t) * cache[t]
            return f
        return integrate_inhomogeneous(lambda t: build_B(model, t, n - 1, "equal", closed=True).matrix,
                                       forcing, initial.p, t_end, step, output_dt, layout="queue", L=L)
    raise ModeMismatchError(f"no reduced integration for {variant}")


def repair_prob_closed_form(model: QueueModel, t, catastrophe_outflow: bool = True):
    """Repair probability for identical catastrophe rates, starting from r(0) = 0.

    r(t) = int_0^t exp(-int_tau^t (eta + gamma)) gamma(tau) dtau.  Passing
    ``catastrophe_outflow=False`` drops gamma from the decay exponent, which
    solves r' = -eta r + gamma instead of the forward equation.
    """
    if not model.gammas.all_equal:
        raise ModeMismatchError("closed-form repair probability needs identical catastrophe rates")
    eta, gam = model.eta, model.gammas.tail
    decay = eta + gam if catastrophe_outflow and not (eta.is_clipped or gam.is_clipped) else None

    def one(tt: float) -> float:
        if tt <= 0.0:
            return 0.0
        if catastrophe_outflow:
            if decay is not None:
                F = decay.antiderivative
                f = lambda s: math.exp(F(s) - F(tt)) * gam.value(s)
            else:
                f = lambda s: math.exp(-eta.integral(s, tt) - gam.integral(s, tt)) * gam.value(s)
        else:
            f = lambda s: math.exp(-eta.integral(s, tt)) * gam.value(s)
        return quad(f, 0.0, tt, limit=400, epsabs=1e-13, epsrel=1e-11)[0]

    if np.ndim(t) == 0:
        return one(float(t))
    return np.array([one(float(x)) for x in np.asarray(t, dtype=float)])


def mean_of(state: ProbabilityState) -> float:
    """Expected queue length sum_i i p_i (the repair state counts as empty)."""
    return float(np.arange(state.p.size) @ state.p)


def limiting_cycle(
    model: QueueModel,
    n: int,
    step: float,
    window: tuple[float, float],
    initial: ProbabilityState | None = None,
    tol: float = PERIODICITY_TOL,
    keep_states: bool = False,
    use_numba: bool | None = None,
) -> Trajectory:
    """Trajectory restricted to a one-period window in the periodic regime.

    Compares every characteristic with its value one period earlier and
    raises NotConvergedError when the largest difference reaches ``tol``.
    """
    t_a, t_b = window
    if abs((t_b - t_a) - 1.0) > 1e-9:
        raise ValueError("window must span exactly one period")
    if t_a < 1.0:
        raise ValueError("window must start after the first period")
    if initial is None:
        initial = ProbabilityState.empty(n)
    traj = integrate(model, initial, t_b, n, step, keep_states=keep_states, use_numba=use_numba)
    i = traj.index_of(t_a)
    per = traj.index_of(t_a) - traj.index_of(t_a - 1.0)
    defect = 0.0
    for name in Trajectory.CHARACTERISTICS:
        x = traj.characteristic(name)
        defect = max(defect, float(np.max(np.abs(x[i:] - x[i - per:len(x) - per]))))
    if defect >= tol:
        raise NotConvergedError(f"periodicity defect {defect:.3g} >= {tol:g}; start the window later")
    win = traj.window(t_a, t_b)
    win.periodicity_defect = defect
    return win


def stationary_oracle(model: QueueModel, n: int) -> ProbabilityState:
    """Null vector of the closed truncated generator for time-homogeneous rates."""
    if not model.all_constant:
        raise ValueError("stationary_oracle requires constant rates")
    a = build_A(model, 0.0, n).matrix
    m = a.copy()
    m[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        x = np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc
    resid = float(np.sum(np.abs(a @ x)))
    if not np.all(np.isfinite(x)) or resid >= 1e-10:
        raise SingularSystemError(f"stationary residual {resid:.3g}")
    return ProbabilityState.from_vector(x)


def truncation_refine(
    model: QueueModel,
    t_end: float,
    n_start: int,
    step: float = 1e-3,
    tol: float = REFINE_TOL,
    budget: int = REFINE_BUDGET,
    use_numba: bool | None = None,
) -> int:
    """Smallest n in the doubling ladder whose limiting cycle survives doubling.

    Characteristics on the last period [t_end - 1, t_end] of dimensions n and
    2n must agree within ``tol``.
    """
    if n_start < model.k + 3:
        raise DimensionError(f"n_start must be at least k + 3 = {model.k + 3}")
    window = (t_end - 1.0, t_end)

    def chars(n):
        tr = limiting_cycle(model, n, step, window, use_numba=use_numba)
        return np.stack([tr.characteristic(c) for c in Trajectory.CHARACTERISTICS])

    n = n_start
    cur = chars(n)
    while True:
        nxt_n = 2 * n
        if nxt_n > budget:
            raise BudgetExceededError(f"no stable truncation up to {budget}")
        nxt = chars(nxt_n)
        if float(np.max(np.abs(nxt - cur))) < tol:
            return n
        n, cur = nxt_n, nxt


def cauchy_operator(sys_builder: Callable[[float], np.ndarray], s: float, t: float, step: float) -> np.ndarray:
    """Propagator U(t, s) of dx/dt = M(t) x by RK4 on the identity (small dense systems)."""
    def mat(tau):
        m = sys_builder(tau)
        return getattr(m, "matrix", m)

    nsteps = _step_count(t - s, step, "t - s")
    u = np.eye(mat(s).shape[0])
    for i in range(nsteps):
        tau = s + i * step
        k1 = mat(tau) @ u
        k2 = mat(tau + 0.5 * step) @ (u + 0.5 * step * k1)
        k3 = mat(tau + 0.5 * step) @ (u + 0.5 * step * k2)
        k4 = mat(tau + step) @ (u + step * k3)
        u = u + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return u
