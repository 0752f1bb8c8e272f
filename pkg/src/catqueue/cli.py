"""Command-line experiments: bounds, trajectories, perturbation bands and full reproductions.

Exit codes: 0 success, 1 a checked inequality failed (or no ergodicity
certificate), 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ExperimentConfig
from .errors import CatQueueError, ConfigError, NotErgodicError
from .lognorm import (
    Convention,
    Envelope,
    RateCurve,
    Verdict,
    H_constant,
    W_constant,
    check_divergence,
    curve_gamma_B,
    curve_gamma_double_star,
    curve_gamma_star,
    fit_envelope,
    floor_envelope,
)
from .perturbation import (
    BoundReport,
    PerturbationSpec,
    Theorem,
    bound_T4,
    bound_T5,
    bound_T6,
    empirical_limsup_diff,
    limiting_pair,
    max_admissible_eps,
    perturb,
)
from .rates import rate_bound_L
from .transient import PERIODICITY_TOL, Trajectory, integrate_many, ProbabilityState
from .validation import (
    CheckResult,
    check_mean_convergence,
    check_triangular_contraction,
    check_triangular_mean,
    check_uniform_contraction,
    check_weighted_contraction,
    compare,
)

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
CURVE_POINTS = 257

log = logging.getLogger("catqueue")


def fmt(x) -> str:
    return f"{x:.12g}"


def write_csv(path: Path, header: str, rows) -> Path:
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(row if isinstance(row, str) else ",".join(fmt(v) for v in row))
            fh.write("\n")
    return path


@dataclass
class CurveSummary:
    curve: RateCurve
    verdict: Verdict
    envelope: Envelope | None


@dataclass
class Analysis:
    """Rate curves, envelopes and weight constants for one configuration."""

    L: float
    curves: dict[str, CurveSummary] = field(default_factory=dict)
    W_shifted: float | None = None
    H: float | None = None
    W_plain: float | None = None
    H_b: float | None = None

    def envelope(self, name: str) -> Envelope | None:
        c = self.curves.get(name)
        return None if c is None or c.verdict is Verdict.FAILS else c.envelope


def _summarise(curve: RateCurve, floor: bool = False) -> CurveSummary:
    verdict = check_divergence(curve)
    env = None
    if verdict is Verdict.DIVERGES:
        try:
            env = floor_envelope(curve) if floor else fit_envelope(curve)
        except NotErgodicError:
            verdict = Verdict.FAILS
    return CurveSummary(curve, verdict, env)


def analyse(cfg: ExperimentConfig) -> Analysis:
    m = cfg.model
    an = Analysis(rate_bound_L(m))
    an.curves["gamma_star"] = _summarise(curve_gamma_star(m))
    if cfg.weights is not None:
        an.curves["gamma_double_star"] = _summarise(curve_gamma_double_star(m, cfg.weights))
        an.W_shifted = W_constant(cfg.weights, Convention.SHIFTED)
        an.H = H_constant(cfg.weights)
    if cfg.weights_b is not None:
        # N = 1 with the sampled minimum as rate
        an.curves["gamma_B"] = _summarise(curve_gamma_B(m, cfg.weights_b), floor=True)
        an.W_plain = W_constant(cfg.weights_b, Convention.PLAIN)
        an.H_b = H_constant(cfg.weights_b)
    return an


def bound_reports(cfg: ExperimentConfig, an: Analysis, eps_hat: float) -> dict[Theorem, BoundReport]:
    """Every bound whose assumptions hold for this configuration."""
    refs = cfg.references
    out: dict[Theorem, BoundReport] = {}

    def ref(th: Theorem, W=None):
        r = refs.get(th)
        return None if r is None else r.value(eps_hat, W)

    env = an.envelope("gamma_star")
    if env is not None:
        out[Theorem.T4] = bound_T4(an.L, env, eps_hat, ref(Theorem.T4))
    env = an.envelope("gamma_double_star")
    if env is not None and an.W_shifted:
        prob, mean = bound_T5(an.L, env, an.H, an.W_shifted, eps_hat, ref(Theorem.T5_PROB))
        mean_ref = ref(Theorem.T5_MEAN, an.W_shifted)
        out[Theorem.T5_PROB] = prob
        out[Theorem.T5_MEAN] = BoundReport(**{**mean.__dict__, "reference_value": mean_ref})
    env = an.envelope("gamma_B")
    if env is not None and an.W_plain:
        prob, mean = bound_T6(an.L, env, an.H_b, an.W_plain, eps_hat, ref(Theorem.T6_PROB), ref(Theorem.T6_MEAN))
        out[Theorem.T6_PROB] = prob
        out[Theorem.T6_MEAN] = mean
    return out


# ---------------------------------------------------------------- bounds


def run_bounds(cfg: ExperimentConfig, out: Path) -> tuple[int, Analysis]:
    an = analyse(cfg)
    tt = np.linspace(0.0, 1.0, CURVE_POINTS)
    names = list(an.curves)
    cols = [an.curves[n].curve(tt) for n in names]
    write_csv(out / "rates.csv", ",".join(["t"] + names), zip(tt, *cols))

    rows = [f"L,{fmt(an.L)}"]
    for name, c in an.curves.items():
        rows.append(f"{name}.verdict,{c.verdict.value}")
        rows.append(f"{name}.period_mean,{fmt(c.curve.mean_over_period)}")
        rows.append(f"{name}.min,{fmt(float(np.min(c.curve(tt))))}")
        if c.envelope is not None:
            rows.append(f"{name}.N,{fmt(c.envelope.N)}")
            rows.append(f"{name}.gamma0,{fmt(c.envelope.gamma0)}")
    for key in ("W_shifted", "H", "W_plain", "H_b"):
        v = getattr(an, key)
        if v is not None:
            rows.append(f"{key},{fmt(v)}")
    write_csv(out / "constants.csv", "quantity,value", rows)

    reports = []
    for eps in sorted({b.eps_hat for b in cfg.bands}):
        reports.extend(bound_reports(cfg, an, eps).values())
    write_csv(out / "bounds.csv", BoundReport.CSV_HEADER, [r.csv_row() for r in reports])

    if all(c.verdict is Verdict.FAILS for c in an.curves.values()):
        log.error("no rate curve certifies ergodicity")
        return EXIT_FAILED, an
    return EXIT_OK, an


# ---------------------------------------------------------------- solve


def periodicity_check(traj: Trajectory, window: tuple[float, float]) -> CheckResult:
    t_a, _ = window
    i = traj.index_of(t_a)
    per = i - traj.index_of(t_a - 1.0)
    defect = max(float(np.max(np.abs(x[i:] - x[i - per:len(x) - per])))
                 for x in (traj.characteristic(c) for c in Trajectory.CHARACTERISTICS))
    return compare("periodicity", "one-period defect on the window", defect, PERIODICITY_TOL, 0.0)


def convergence_checks(cfg: ExperimentConfig, an: Analysis, trajs: dict[int, Trajectory]) -> list[CheckResult]:
    m = cfg.model
    res: list[CheckResult] = []
    first = an.curves["gamma_star"].verdict is Verdict.DIVERGES
    weighted = "gamma_double_star" in an.curves and an.curves["gamma_double_star"].verdict is Verdict.DIVERGES
    second = "gamma_B" in an.curves and an.curves["gamma_B"].verdict is Verdict.DIVERGES
    for j in cfg.levels:
        if first:
            res.append(check_uniform_contraction(m, trajs, j))
        if weighted:
            curve = an.curves["gamma_double_star"].curve
            res.append(check_weighted_contraction(m, cfg.weights, trajs, j, curve))
            if an.W_shifted:
                res.append(check_mean_convergence(m, cfg.weights, trajs, j, curve))
        if second:
            res.append(check_triangular_contraction(m, cfg.weights_b, trajs, j))
            if cfg.envelope_rate_b is not None:
                res.append(check_triangular_contraction(m, cfg.weights_b, trajs, j, cfg.envelope_rate_b))
            if an.W_plain:
                res.append(check_triangular_mean(m, cfg.weights_b, trajs, j))
                if cfg.envelope_rate_b is not None:
                    res.append(check_triangular_mean(m, cfg.weights_b, trajs, j, cfg.envelope_rate_b))
    return res


def run_solve(cfg: ExperimentConfig, out: Path, an: Analysis | None = None) -> list[CheckResult]:
    an = an or analyse(cfg)
    n = cfg.truncation
    levels = [0] + [j for j in cfg.levels if j != 0]
    runs = integrate_many(cfg.model, [ProbabilityState.point_mass(j, n) for j in levels], cfg.horizon, n,
                          step=cfg.step, output_dt=cfg.output_dt)
    trajs = dict(zip(levels, runs))
    t_a, t_b = cfg.window
    head = ",".join(["t"] + [f"level_{j}" for j in levels])
    for name in Trajectory.CHARACTERISTICS:
        for tag, (lo, hi) in (("full", (0.0, t_a)), ("window", (t_a, t_b))):
            parts = [trajs[j].window(lo, hi) for j in levels]
            cols = [p.characteristic(name) for p in parts]
            write_csv(out / f"{name}_{tag}.csv", head, zip(parts[0].grid, *cols))
    trajs[0].window(t_a, t_b).to_csv(out / "trajectory_window.csv", p_cutoff=cfg.p_cutoff)

    checks = [periodicity_check(trajs[0], cfg.window)] + convergence_checks(cfg, an, trajs)
    write_csv(out / "convergence_checks.csv", CheckResult.CSV_HEADER, [c.csv_row() for c in checks])
    return checks


# ---------------------------------------------------------------- perturb

BAND_NORMS = {
    Theorem.T4: ("l1", "weights"),
    Theorem.T5_PROB: ("diagonal", "weights"),
    Theorem.T6_PROB: ("triangular", "weights_b"),
}
MEAN_OF = {Theorem.T4: None, Theorem.T5_PROB: Theorem.T5_MEAN, Theorem.T6_PROB: Theorem.T6_MEAN}
PROB_OF = {Theorem.T4: Theorem.T4, Theorem.T5_PROB: Theorem.T5_PROB, Theorem.T5_MEAN: Theorem.T5_PROB,
           Theorem.T6_PROB: Theorem.T6_PROB, Theorem.T6_MEAN: Theorem.T6_PROB}


def _dominance(name: str, empirical: float, report: BoundReport) -> list[CheckResult]:
    res = [compare(f"perturbation_{name}", f"limsup difference at eps_hat={report.eps_hat:g}", empirical,
                   report.value)]
    if report.reference_value is not None:
        res.append(compare(f"perturbation_{name}_reference", f"published constant at eps_hat={report.eps_hat:g}",
                           empirical, report.reference_value))
    return res


def run_perturb(cfg: ExperimentConfig, out: Path, an: Analysis | None = None) -> list[CheckResult]:
    if not cfg.bands:
        raise ConfigError("perturbation: no bands configured")
    an = an or analyse(cfg)
    checks: list[CheckResult] = []
    for band in cfg.bands:
        reports = bound_reports(cfg, an, band.eps_hat)
        prob_th = PROB_OF[band.theorem]
        if band.theorem not in reports:
            raise ConfigError(f"perturbation.bands: {band.theorem.value} is not applicable to this model")
        for th in (prob_th, MEAN_OF[prob_th]):
            if th is not None and not reports[th].valid:
                env = {Theorem.T5_PROB: "gamma_double_star", Theorem.T6_PROB: "gamma_B"}[prob_th]
                H = an.H if prob_th is Theorem.T5_PROB else an.H_b
                cap = max_admissible_eps(th, an.L, an.envelope(env), H)
                raise CatQueueError(f"{th.value} bound is invalid at eps_hat={band.eps_hat:g}; "
                                    f"admissible eps_hat < {cap:.6g}")
        perturbed = perturb(cfg.model, PerturbationSpec(band.eps_hat, cfg.frequency))
        base, pert = limiting_pair(cfg.model, perturbed, cfg.truncation, cfg.step, cfg.window)

        norm, wkey = BAND_NORMS[prob_th]
        w = getattr(cfg, wkey)
        state_diff = empirical_limsup_diff(cfg.model, perturbed, cfg.truncation, cfg.step, cfg.window, norm,
                                           "state", w, pair=(base, pert))
        checks += _dominance(prob_th.value, state_diff, reports[prob_th])
        mean_th = MEAN_OF[prob_th]
        if mean_th is not None:
            mean_diff = empirical_limsup_diff(cfg.model, perturbed, cfg.truncation, cfg.step, cfg.window,
                                              characteristic="mean", pair=(base, pert))
            checks += _dominance(mean_th.value, mean_diff, reports[mean_th])

        char = "mean" if band.theorem is mean_th else "empty_prob"
        half = reports[band.theorem].value
        b, p = base.characteristic(char), pert.characteristic(char)
        write_csv(out / f"band_{band.theorem.value}_{band.eps_hat:g}.csv", "t,base,perturbed,lower,upper",
                  zip(base.grid, b, p, b - half, b + half))
    write_csv(out / "perturbation_checks.csv", CheckResult.CSV_HEADER, [c.csv_row() for c in checks])
    return checks


# ---------------------------------------------------------------- reproduce


def reproduce(cfg: ExperimentConfig, out: Path) -> tuple[int, list[CheckResult]]:
    code, an = run_bounds(cfg, out)
    with ThreadPoolExecutor(max_workers=2) as pool:
        f_solve = pool.submit(run_solve, cfg, out, an)
        f_pert = pool.submit(run_perturb, cfg, out, an) if cfg.bands else None
        checks = f_solve.result() + (f_pert.result() if f_pert else [])
    write_csv(out / "summary.csv", CheckResult.CSV_HEADER, [c.csv_row() for c in checks])
    failed = [c for c in checks if not c.passed]
    return (EXIT_FAILED if failed or code else EXIT_OK), checks


def print_table(checks: list[CheckResult], stream=None) -> None:
    stream = stream or sys.stdout
    width = max((len(c.name) for c in checks), default=5)
    for c in checks:
        mark = "pass" if c.passed else "FAIL"
        stream.write(f"{mark}  {c.name:<{width}}  {c.description:<48}  lhs={c.lhs_max:.4g}  "
                     f"excess={c.worst_excess:.3g}\n")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment file (TOML)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--truncation", type=int, help="override the truncation dimension")
    common.add_argument("--step", type=float, help="override the RK4 step")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="catqueue", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("bounds", parents=[common], help="rate curves, envelopes, constants and bound values")
    sub.add_parser("solve", parents=[common], help="trajectories and convergence checks")
    sub.add_parser("perturb", parents=[common], help="perturbation bands and dominance checks")
    r = sub.add_parser("reproduce", parents=[common], help="full run of a built-in example")
    r.add_argument("example", type=int, choices=(1, 2))
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "reproduce":
            cfg = cfgmod.load(args.config) if args.config else cfgmod.builtin(args.example)
        elif args.config is None:
            raise ConfigError("--config is required")
        else:
            cfg = cfgmod.load(args.config)
        cfg = cfg.with_overrides(args.truncation, args.step)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = args.out or Path(cfg.outputs)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "bounds":
            code, _ = run_bounds(cfg, out)
            return code
        if args.command == "solve":
            checks = run_solve(cfg, out)
        elif args.command == "perturb":
            checks = run_perturb(cfg, out)
        else:
            code, checks = reproduce(cfg, out)
            print_table(checks)
            return code
        print_table(checks)
        return EXIT_OK if all(c.passed for c in checks) else EXIT_FAILED
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CatQueueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
