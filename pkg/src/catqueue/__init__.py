"""Transient and limiting analysis of a periodic M_t/M_t/1 queue with balking, catastrophes and repairs."""

from .errors import *  # noqa: F401,F403
from .generator import Variant, WeightSequence, build_A, build_A_star, build_B, weight_transform
from .lognorm import (
    Convention,
    Envelope,
    Verdict,
    check_divergence,
    fit_envelope,
    gamma_B_rate,
    gamma_double_star,
    H_constant,
    W_constant,
)
from .perturbation import PerturbationSpec, Theorem, bound_T4, bound_T5, bound_T6, perturb
from .rates import CatastropheFamily, QueueModel, RateFunction, example1_model, example2_model, rate_bound_L, trig
from .transient import ProbabilityState, Trajectory, integrate, limiting_cycle, stationary_oracle

__version__ = "0.1.0"
