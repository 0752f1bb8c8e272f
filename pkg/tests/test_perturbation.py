import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from catqueue.errors import NegativeRateError, PerturbationError
from catqueue.generator import WeightSequence
from catqueue.lognorm import Envelope
from catqueue.perturbation import (
    BoundReport,
    PerturbationSpec,
    Theorem,
    bound_T4,
    bound_T5,
    bound_T6,
    empirical_limsup_diff,
    generator_deviation_norm,
    limiting_pair,
    max_admissible_eps,
    perturb,
    state_distance,
)
from catqueue.rates import constant_model, rate_bound_L, trig

GRID = np.linspace(0.0, 1.0, 2001)

from strategies import models  # noqa: E402


class TestPerturb:
    def test_zero_is_identity(self, ex1):
        assert perturb(ex1, PerturbationSpec(0.0)) is ex1

    def test_sup_deviation(self, ex1):
        p = perturb(ex1, PerturbationSpec(1e-3))
        for name, r in ex1.rates().items():
            dev = np.max(np.abs(r.value(GRID) - p.rates()[name].value(GRID)))
            assert dev == pytest.approx(1e-3, rel=1e-6), name
        dev = np.max(np.abs(ex1.gammas.tail.value(GRID) - p.gammas.tail.value(GRID)))
        assert dev == pytest.approx(1e-3, rel=1e-6)

    def test_deviation_shape(self, ex1):
        p = perturb(ex1, PerturbationSpec(1e-3, frequency=3))
        assert np.allclose(p.eta.value(GRID) - ex1.eta.value(GRID), 1e-3 * np.sin(6 * math.pi * GRID), atol=1e-15)

    def test_beta_clamped(self):
        m = constant_model(2.0, 3.0, 1.0, 1.0, beta=1.0, k=1)
        p = perturb(m, PerturbationSpec(0.1))
        b = p.beta.value(GRID)
        assert b.max() <= 1.0 and b.min() == pytest.approx(0.9, abs=1e-6)
        assert np.max(np.abs(b - 1.0)) <= 0.1 + 1e-12

    def test_negative_clamped(self):
        m = constant_model(0.0, 3.0, 1.0, 1.0)
        p = perturb(m, PerturbationSpec(0.1, rates=("lambda",)))
        assert p.lam.value(GRID).min() == 0.0
        assert p.lam.value(GRID).max() == pytest.approx(0.1, abs=1e-6)

    def test_clamp_off_raises(self):
        m = constant_model(0.0, 3.0, 1.0, 1.0)
        with pytest.raises(NegativeRateError):
            perturb(m, PerturbationSpec(0.1, rates=("lambda",), clamp=False))

    def test_subset(self, ex1):
        p = perturb(ex1, PerturbationSpec(1e-3, rates=("eta",)))
        assert p.lam == ex1.lam and p.gammas == ex1.gammas and p.eta != ex1.eta

    @pytest.mark.parametrize("kw", [{"eps_hat": -1.0}, {"eps_hat": 1.0, "frequency": 0},
                                    {"eps_hat": 1.0, "rates": ("nu",)}])
    def test_bad_spec(self, kw):
        with pytest.raises(PerturbationError):
            PerturbationSpec(**kw)

    def test_spec_round_trip(self):
        s = PerturbationSpec(2e-4, 5, ("mu", "beta"), False)
        assert PerturbationSpec.from_dict(s.to_dict()) == s

    @given(models(), st.floats(1e-6, 0.2))
    def test_invariants(self, m, eps):
        p = perturb(m, PerturbationSpec(eps))
        for name, r in m.rates().items():
            v = p.rates()[name].value(GRID)
            assert v.min() >= 0.0
            assert np.max(np.abs(v - r.value(GRID))) <= eps + 1e-12
        assert p.beta.value(GRID).max() <= 1.0
        L = rate_bound_L(m)
        flow = np.abs(m.lam.value(GRID) * m.beta.value(GRID) - p.lam.value(GRID) * p.beta.value(GRID))
        assert flow.max() <= (L + 1) * eps + 1e-12


class TestGeneratorDeviation:
    def test_zero(self, ex1):
        assert generator_deviation_norm(ex1, ex1, 0.3) == 0.0

    def test_example1_cap(self, ex1):
        p = perturb(ex1, PerturbationSpec(1e-3))
        v = generator_deviation_norm(ex1, p, 0.25, eps_hat=1e-3)
        assert 0.0 < v <= 0.057

    @pytest.mark.parametrize("t", [0.05, 0.25, 0.4, 0.9])
    def test_eta_only(self, ex1, t):
        p = perturb(ex1, PerturbationSpec(1e-3, rates=("eta",)))
        want = 2.0 * 1e-3 * abs(math.sin(6 * math.pi * t))
        assert generator_deviation_norm(ex1, p, t) == pytest.approx(want, abs=1e-15)

    def test_dense_truncation_agrees(self, ex2):
        p = perturb(ex2, PerturbationSpec(1e-4))
        assert generator_deviation_norm(ex2, p, 0.3) == pytest.approx(generator_deviation_norm(ex2, p, 0.3, n=300),
                                                                       abs=1e-15)

    @given(models(), st.floats(1e-5, 0.1), st.integers(1, 6), st.lists(st.floats(0, 1), min_size=100, max_size=100))
    def test_random_cap(self, m, eps, freq, ts):
        p = perturb(m, PerturbationSpec(eps, frequency=freq))
        cap = (2 * rate_bound_L(m) + 6) * eps
        for t in ts:
            assert generator_deviation_norm(m, p, t) <= cap * (1 + 1e-12) + 1e-15

    def test_structure_mismatch(self, ex1, ex2):
        with pytest.raises(PerturbationError):
            generator_deviation_norm(ex1, ex2, 0.0)


class TestBounds:
    def test_T4_example(self):
        r = bound_T4(25.5, Envelope(2.0, 2.0), 1e-3)
        assert r.value == pytest.approx(28.5e-3, rel=1e-14)
        assert r.valid and r.theorem is Theorem.T4

    def test_T4_log_term(self):
        r = bound_T4(0.0, Envelope(2 * math.e, 3.0), 0.1)
        assert r.value == pytest.approx(6 * 0.1 * 2 / 3.0, rel=1e-14)

    def test_T4_floor(self):
        assert bound_T4(25.5, Envelope(1.2, 2.0), 1e-3).value == bound_T4(25.5, Envelope(2.0, 2.0), 1e-3).value

    def test_T5_formula(self):
        L, N, g0, H, W, eps = 25.5, 2.0, 1.5, 1.05, 0.1393, 1e-6
        prob, mean = bound_T5(L, Envelope(N, g0), H, W, eps)
        c = (4 * L + 12) * eps * H
        assert prob.value == pytest.approx(c * L * N * N / (g0 * (g0 - c)), rel=1e-14)
        assert mean.value == prob.value / W
        assert prob.valid and mean.valid

    def test_T5_invalid(self):
        prob, mean = bound_T5(25.5, Envelope(2.0, 1.5), 1.05, 0.14, 0.02)
        assert not prob.valid and not mean.valid and prob.value == math.inf

    def test_T6_formula(self):
        L, N, g0, H, W, eps = 8.0, 1.0, 1 / 3, 2.5, 1.0, 1e-5
        prob, mean = bound_T6(L, Envelope(N, g0), H, W, eps)
        want = eps * N * (L + 1) * (6 * H * L * N + g0) / (g0 * (g0 - 12 * eps * H * N * (L + 1)))
        assert prob.value == pytest.approx(want, rel=1e-14)
        assert mean.value == prob.value / W

    def test_T6_zero_and_invalid(self):
        assert bound_T6(8.0, Envelope(1.0, 1 / 3), 2.5, 1.0, 0.0)[0].value == 0.0
        assert not bound_T6(8.0, Envelope(1.0, 1 / 3), 2.5, 1.0, 1e-2)[0].valid

    def test_linear_near_zero(self):
        a = bound_T5(25.5, Envelope(2.0, 1.5), 1.05, 0.14, 1e-10)[0].value
        b = bound_T5(25.5, Envelope(2.0, 1.5), 1.05, 0.14, 2e-10)[0].value
        assert b / a == pytest.approx(2.0, rel=1e-6)

    @pytest.mark.parametrize("th", list(Theorem))
    def test_max_admissible_is_the_validity_edge(self, th):
        L, env, H, W = 8.0, Envelope(1.3, 0.5), 2.5, 1.0
        edge = max_admissible_eps(th, L, env, H)
        if math.isinf(edge):
            return
        fn = bound_T5 if th.name.startswith("T5") else bound_T6
        assert fn(L, env, H, W, edge * (1 - 1e-9))[0].valid
        assert not fn(L, env, H, W, edge * (1 + 1e-9))[0].valid

    @given(st.floats(0, 30), st.floats(1, 5), st.floats(0.1, 3), st.floats(1, 3), st.floats(0.05, 2),
           st.floats(0, 1e-3), st.floats(0, 1e-3))
    def test_monotone(self, L, N, g0, H, W, e1, e2):
        lo, hi = sorted((e1, e2))
        env = Envelope(N, g0)
        assert bound_T4(L, env, lo).value <= bound_T4(L, env, hi).value
        for fn in (bound_T5, bound_T6):
            a, b = fn(L, env, H, W, lo), fn(L, env, H, W, hi)
            for ra, rb in zip(a, b):
                if rb.valid:
                    assert ra.valid and ra.value <= rb.value * (1 + 1e-14)

    def test_csv_row(self):
        r = BoundReport(Theorem.T4, 1e-3, 25.5, 2.0, 2.0, None, None, 0.0285, True, 0.03)
        assert r.csv_row() == "T4,0.001,25.5,2,2,,,0.0285,true,0.03"
        assert len(r.csv_row().split(",")) == len(BoundReport.CSV_HEADER.split(","))

    def test_envelope_must_be_positive(self):
        with pytest.raises(ValueError):
            bound_T4(1.0, Envelope(1.0, 0.0), 1e-3)


class TestEmpirical:
    def test_state_distance_norms(self):
        w = WeightSequence.geometric(1.0)
        x = np.array([0.0, 1.0, 0.0, 0.0])
        y = np.array([0.0, 0.0, 0.0, 1.0])
        assert state_distance(x, y) == 2.0
        assert state_distance(x, y, "diagonal", w) == pytest.approx(1 * 2 + 1 * 8)
        # queue difference (1, 0, -1) has upper tails (0, -1, -1)
        assert state_distance(x, y, "triangular", w) == pytest.approx(0 * 1 + 1 * 2 + 1 * 4)

    def test_state_distance_needs_weights(self):
        with pytest.raises(ValueError):
            state_distance(np.zeros(3), np.zeros(3), "diagonal")

    def test_identical_pair(self):
        base = constant_model(1.0, 3.0, 2.0, 1.0, k=2)
        model = type(base)(trig(2.0, sin=1.0), base.mu, base.beta, base.eta, base.gammas, 2)
        assert empirical_limsup_diff(model, model, 40, 1e-3, (9.0, 10.0)) < 1e-10
        assert empirical_limsup_diff(model, model, 40, 1e-3, (9.0, 10.0), characteristic="mean") < 1e-10

    def test_reuses_supplied_pair(self, ex1):
        p = perturb(ex1, PerturbationSpec(1e-3))
        pair = limiting_pair(ex1, p, 110, 1e-3, (19.0, 20.0))
        d = empirical_limsup_diff(ex1, p, 110, 1e-3, (19.0, 20.0), pair=pair)
        assert 0.0 < d < 0.0285
        m = empirical_limsup_diff(ex1, p, 110, 1e-3, (19.0, 20.0), characteristic="mean", pair=pair)
        assert m == pytest.approx(float(np.max(np.abs(pair[0].mean - pair[1].mean))))
