"""Experiment configuration: TOML text with one table per rate."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import tomli_w

from .errors import CatQueueError, ConfigError, StepTooLargeError
from .generator import WeightSequence
from .perturbation import Theorem
from .rates import CatastropheFamily, QueueModel, RateFunction, rate_bound_L
from .transient import check_step

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class Band:
    """One perturbation experiment: which bound to draw and at what eps_hat."""

    theorem: Theorem
    eps_hat: float


@dataclass(frozen=True)
class Reference:
    """Published bound scale * eps / (1 - pole * eps), optionally divided by W."""

    scale: float
    pole: float = 0.0
    per_W: bool = False

    def value(self, eps_hat: float, W: float | None = None) -> float | None:
        """None where the published denominator is not positive."""
        den = 1.0 - self.pole * eps_hat
        if den <= 0.0:
            return None
        v = self.scale * eps_hat / den
        return v / W if self.per_W and W else v


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    model: QueueModel
    horizon: float
    window: tuple[float, float]
    truncation: int = 200
    step: float = 1e-3
    output_dt: float = 0.01
    levels: tuple[int, ...] = (1, 10, 100)
    weights: WeightSequence | None = None
    weights_b: WeightSequence | None = None
    envelope_rate_b: float | None = None
    frequency: int = 3
    bands: tuple[Band, ...] = ()
    references: dict = field(default_factory=dict)
    p_cutoff: int = 30
    outputs: str = "out"

    def __post_init__(self):
        t_a, t_b = self.window
        if not 0.0 <= t_a < t_b <= self.horizon:
            raise ConfigError(f"solver.window {list(self.window)} must lie inside [0, horizon={self.horizon}]")
        if self.step <= 0.0 or self.output_dt <= 0.0:
            raise ConfigError("solver.step and solver.output_dt must be positive")
        if self.truncation < self.model.k + 3:
            raise ConfigError(f"solver.truncation {self.truncation} must be at least k + 3 = {self.model.k + 3}")
        try:
            check_step(self.step, rate_bound_L(self.model))
        except StepTooLargeError as exc:
            raise ConfigError(f"solver.step: {exc}") from exc
        bad = [j for j in self.levels if not 0 < j <= self.truncation - 2]
        if bad:
            raise ConfigError(f"solver.levels {bad} fall outside the truncated state space")

    def with_overrides(self, truncation: int | None = None, step: float | None = None,
                       outputs: str | None = None) -> ExperimentConfig:
        d = self.__dict__.copy()
        if truncation is not None:
            d["truncation"] = truncation
        if step is not None:
            d["step"] = step
        if outputs is not None:
            d["outputs"] = outputs
        return ExperimentConfig(**d)


def _rate_to_dict(r: RateFunction) -> dict:
    return r.to_dict()


def _rate_from_dict(d, path: str) -> RateFunction:
    if isinstance(d, (int, float)):
        return RateFunction.constant(float(d))
    if not isinstance(d, dict) or "a0" not in d:
        raise ConfigError(f"{path}: expected a number or a table with key 'a0'")
    try:
        return RateFunction.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def to_dict(cfg: ExperimentConfig) -> dict:
    m = cfg.model
    out: dict = {
        "name": cfg.name,
        "model": {
            "k": m.k,
            "lambda": _rate_to_dict(m.lam),
            "mu": _rate_to_dict(m.mu),
            "beta": _rate_to_dict(m.beta),
            "eta": _rate_to_dict(m.eta),
            "gamma": {
                "explicit": [_rate_to_dict(g) for g in m.gammas.explicit],
                "tail": _rate_to_dict(m.gammas.tail),
            },
        },
        "solver": {
            "truncation": cfg.truncation,
            "step": cfg.step,
            "output_dt": cfg.output_dt,
            "horizon": cfg.horizon,
            "window": list(cfg.window),
            "levels": list(cfg.levels),
            "p_cutoff": cfg.p_cutoff,
        },
        "outputs": cfg.outputs,
    }
    if cfg.weights is not None:
        out["weights"] = cfg.weights.to_dict()
    if cfg.weights_b is not None:
        out["weights_b"] = cfg.weights_b.to_dict()
        if cfg.envelope_rate_b is not None:
            out["weights_b"]["envelope_rate"] = cfg.envelope_rate_b
    if cfg.bands:
        out["perturbation"] = {
            "frequency": cfg.frequency,
            "bands": [{"theorem": b.theorem.value, "eps_hat": b.eps_hat} for b in cfg.bands],
        }
    if cfg.references:
        out["reference"] = {
            k.value: {"scale": r.scale, "pole": r.pole, "per_W": r.per_W} for k, r in cfg.references.items()
        }
    return out


def _get(d: dict, key: str, path: str, kind=None, default=...):
    if key not in d:
        if default is ...:
            raise ConfigError(f"{path}.{key}: missing")
        return default
    v = d[key]
    if kind is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if kind is not None and not isinstance(v, kind):
        raise ConfigError(f"{path}.{key}: expected {kind.__name__}, got {type(v).__name__}")
    return v


def _weights(d, path: str) -> WeightSequence:
    try:
        return WeightSequence.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def from_dict(d: dict) -> ExperimentConfig:
    try:
        md = _get(d, "model", "", dict)
        gd = _get(md, "gamma", "model", dict)
        gammas = CatastropheFamily(
            tuple(_rate_from_dict(g, f"model.gamma.explicit[{i}]") for i, g in enumerate(gd.get("explicit", []))),
            _rate_from_dict(_get(gd, "tail", "model.gamma"), "model.gamma.tail"),
        )
        model = QueueModel(
            lam=_rate_from_dict(_get(md, "lambda", "model"), "model.lambda"),
            mu=_rate_from_dict(_get(md, "mu", "model"), "model.mu"),
            beta=_rate_from_dict(_get(md, "beta", "model"), "model.beta"),
            eta=_rate_from_dict(_get(md, "eta", "model"), "model.eta"),
            gammas=gammas,
            k=_get(md, "k", "model", int),
        )
        sd = _get(d, "solver", "", dict)
        window = _get(sd, "window", "solver", list)
        if len(window) != 2:
            raise ConfigError("solver.window: expected [t_a, t_b]")
        kw: dict = {}
        if "weights" in d:
            kw["weights"] = _weights(d["weights"], "weights")
        if "weights_b" in d:
            wb = dict(d["weights_b"])
            rate = wb.pop("envelope_rate", None)
            kw["weights_b"] = _weights(wb, "weights_b")
            kw["envelope_rate_b"] = None if rate is None else float(rate)
        if "perturbation" in d:
            pd = d["perturbation"]
            kw["frequency"] = _get(pd, "frequency", "perturbation", int, 3)
            bands = []
            for i, b in enumerate(_get(pd, "bands", "perturbation", list)):
                try:
                    bands.append(Band(Theorem(b["theorem"]), float(b["eps_hat"])))
                except (KeyError, ValueError) as exc:
                    raise ConfigError(f"perturbation.bands[{i}]: {exc}") from exc
            kw["bands"] = tuple(bands)
        refs = {}
        for key, r in d.get("reference", {}).items():
            try:
                refs[Theorem(key)] = Reference(float(r["scale"]), float(r.get("pole", 0.0)), bool(r.get("per_W", False)))
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"reference.{key}: {exc}") from exc
        return ExperimentConfig(
            name=_get(d, "name", "", str, "experiment"),
            model=model,
            horizon=_get(sd, "horizon", "solver", float),
            window=(float(window[0]), float(window[1])),
            truncation=_get(sd, "truncation", "solver", int, 200),
            step=_get(sd, "step", "solver", float, 1e-3),
            output_dt=_get(sd, "output_dt", "solver", float, 0.01),
            levels=tuple(int(j) for j in _get(sd, "levels", "solver", list, [1, 10, 100])),
            p_cutoff=_get(sd, "p_cutoff", "solver", int, 30),
            outputs=_get(d, "outputs", "", str, "out"),
            references=refs,
            **kw,
        )
    except ConfigError:
        raise
    except CatQueueError as exc:
        raise ConfigError(f"model: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc


def loads(text: str) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"syntax error: {exc}") from exc
    return from_dict(data)


def dumps(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def load(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        return loads(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def builtin(example: int) -> ExperimentConfig:
    """Shipped configuration for example 1 or 2."""
    if example not in (1, 2):
        raise ConfigError(f"no built-in example {example}")
    text = resources.files("catqueue").joinpath("configs").joinpath(f"example{example}.cfg").read_text()
    return loads(text)
