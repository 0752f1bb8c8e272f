import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from catqueue.errors import (
    BudgetExceededError,
    DimensionError,
    IntegrationError,
    ModeMismatchError,
    NotConvergedError,
    SingularSystemError,
    StepTooLargeError,
)
from catqueue.generator import Variant, build_A, build_B
from catqueue.rates import CatastropheFamily, QueueModel, RateFunction, constant_model, trig
from catqueue.transient import (
    ProbabilityState,
    Trajectory,
    cauchy_operator,
    integrate,
    integrate_inhomogeneous,
    integrate_many,
    integrate_reduced,
    limiting_cycle,
    mean_of,
    repair_prob_closed_form,
    stationary_oracle,
    truncation_refine,
)


@pytest.fixture(scope="module")
def ex1_run():
    from catqueue.rates import example1_model

    m = example1_model()
    return m, integrate(m, ProbabilityState.empty(200), 20.0, 200)


class TestProbabilityState:
    def test_point_mass(self):
        s = ProbabilityState.point_mass(7, 12)
        assert s.r == 0.0 and s.p[7] == 1.0 and s.vector.sum() == 1.0

    def test_level_outside_truncation(self):
        with pytest.raises(DimensionError):
            ProbabilityState.point_mass(11, 12)

    def test_means(self):
        assert mean_of(ProbabilityState.empty(5)) == 0.0
        assert mean_of(ProbabilityState.point_mass(7, 10)) == 7.0
        assert mean_of(ProbabilityState(0.0, np.array([0.5, 0.5, 0.0]))) == 0.5


class TestIntegrate:
    def test_mass_conservation(self, ex1_run):
        _, tr = ex1_run
        assert abs(1.0 - tr.states[-1].sum()) < 1e-8
        assert np.all(np.abs(1.0 - tr.states.sum(axis=1)) < 1e-8)
        assert tr.states.min() > -1e-10

    def test_output_grid(self, ex1_run):
        _, tr = ex1_run
        assert tr.grid.size == 2001
        assert tr.grid[-1] == pytest.approx(20.0)

    def test_zero_rates_constant(self):
        m = constant_model(0.0, 0.0, 0.0, 0.0)
        x0 = ProbabilityState(0.25, np.array([0.25, 0.5, 0.0, 0.0]))
        tr = integrate(m, x0, 1.0, 5)
        assert np.all(tr.states == x0.vector)

    def test_step_limit(self, ex1):
        with pytest.raises(StepTooLargeError):
            integrate(ex1, ProbabilityState.empty(110), 1.0, 110, step=0.02)

    def test_dimension_floor(self, ex1):
        with pytest.raises(DimensionError):
            integrate(ex1, ProbabilityState.empty(50), 1.0, 50)

    def test_initial_must_be_distribution(self, ex1):
        bad = ProbabilityState(0.0, np.full(109, 0.5))
        with pytest.raises(ValueError):
            integrate(ex1, bad, 1.0, 110)

    @pytest.mark.parametrize("neg,drift", [(-1e-6, 0.0), (0.0, 1e-6)])
    def test_solver_health_checks(self, ex1, monkeypatch, neg, drift):
        from catqueue import _kernels, transient

        real = _kernels.rk4_full

        def broken(*args):
            states, chars, _, _ = real(*args)
            return states, chars, neg, drift

        monkeypatch.setattr(transient._kernels, "rk4_full", broken)
        with pytest.raises(IntegrationError):
            integrate(ex1, ProbabilityState.empty(110), 0.1, 110)

    def test_concurrent_matches_sequential(self, ex1):
        x0s = [ProbabilityState.point_mass(j, 110) for j in (0, 3)]
        par = integrate_many(ex1, x0s, 1.0, 110)
        for x0, tr in zip(x0s, par):
            assert np.array_equal(tr.states, integrate(ex1, x0, 1.0, 110).states)

    def test_csv_layout(self, ex1, tmp_path):
        tr = integrate(ex1, ProbabilityState.empty(110), 0.05, 110)
        tr.to_csv(tmp_path / "t.csv", p_cutoff=2)
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "t,r,p0,p1,p2,empty_prob,mean"
        assert lines[1] == "0,0,1,0,0,1,0"
        assert len(lines) == 7

    def test_window(self, ex1_run):
        _, tr = ex1_run
        w = tr.window(19.0, 20.0)
        assert w.grid[0] == pytest.approx(19.0) and w.grid[-1] == pytest.approx(20.0)
        assert w.states.shape == (101, 200)


class TestReducedFormulations:
    def test_a_star_matches_full(self, ex1_run):
        m, full = ex1_run
        red = integrate_reduced(m, Variant.REDUCED_A_STAR, ProbabilityState.empty(200), 1.0, 200)
        assert np.max(np.abs(red.states - full.states[:101])) < 1e-7

    def test_b_general_reconstructs_r(self, ex2):
        full = integrate(ex2, ProbabilityState.empty(110), 1.0, 110)
        red = integrate_reduced(ex2, Variant.B_GENERAL, ProbabilityState.empty(110), 1.0, 110)
        assert np.max(np.abs(red.r - full.r)) < 1e-7
        assert np.max(np.abs(red.states[:, 1:] - full.states[:, 1:])) < 1e-7

    def test_b_equal_with_closed_form_r(self, ex1_run):
        m, full = ex1_run
        red = integrate_reduced(m, Variant.B_EQUAL, ProbabilityState.empty(200), 0.5, 200)
        assert np.max(np.abs(red.states - full.states[:51])) < 1e-7

    def test_b_equal_rejects_unequal_family(self, ex2):
        with pytest.raises(ModeMismatchError):
            integrate_reduced(ex2, Variant.B_EQUAL, ProbabilityState.empty(110), 0.1, 110)

    def test_zero_system_constant(self):
        tr = integrate_inhomogeneous(lambda t: np.zeros((3, 3)), None, [0.2, 0.3, 0.5], 1.0, 1e-2, output_dt=0.1,
                                     L=0.0)
        assert np.all(tr.states[:, 1:] == [0.2, 0.3, 0.5])
        assert np.allclose(tr.r, 0.0)

    def test_variation_of_constants(self, rng):
        """z(t) = U(t,0) z0 + int U(t,s) f(s) ds with U from propagator products."""
        n = 8
        m0 = rng.normal(size=(n, n)) - 3 * np.eye(n)
        m1 = 0.5 * rng.normal(size=(n, n))
        f0 = rng.normal(size=n)

        def mat(t):
            return m0 + m1 * math.cos(2 * math.pi * t)

        def force(t):
            return f0 * (1 + math.sin(2 * math.pi * t))

        z0 = rng.normal(size=n)
        direct = integrate_inhomogeneous(mat, force, z0, 1.0, 1e-3, output_dt=1.0, layout="queue", L=1.0)
        grid = np.linspace(0, 1, 41)
        steps = [cauchy_operator(mat, a, b, 1e-3) for a, b in zip(grid[:-1], grid[1:])]
        # U(1, s_i) by right-to-left products of the step propagators
        tail = [np.eye(n)]
        for u in reversed(steps):
            tail.append(tail[-1] @ u)
        tail = tail[::-1]
        vals = np.array([tail[i] @ force(s) for i, s in enumerate(grid)])
        from scipy.integrate import simpson

        vc = tail[0] @ z0 + simpson(vals, x=grid, axis=0)
        assert np.max(np.abs(vc - direct.states[-1, 1:])) < 1e-5


class TestRepairClosedForm:
    def test_zero_at_start(self, ex1):
        assert repair_prob_closed_form(ex1, 0.0) == 0.0

    def test_decay_without_catastrophe_outflow(self):
        m = constant_model(1.0, 1.0, 2.0, 1.0)
        assert repair_prob_closed_form(m, 1.0, catastrophe_outflow=False) == pytest.approx(
            0.5 * (1 - math.exp(-2)), abs=1e-12)
        assert repair_prob_closed_form(m, 1.0, catastrophe_outflow=False) == pytest.approx(0.43233, abs=1e-5)

    def test_constant_rates_with_outflow(self):
        m = constant_model(1.0, 1.0, 2.0, 1.0)
        assert repair_prob_closed_form(m, 1.0) == pytest.approx((1 - math.exp(-3)) / 3, abs=1e-12)

    def test_matches_ode(self, ex1_run):
        m, tr = ex1_run
        for t in (1.0, 5.0, 12.34):
            assert repair_prob_closed_form(m, t) == pytest.approx(tr.states[tr.index_of(t), 0], abs=1e-6)

    def test_unequal_family(self, ex2):
        with pytest.raises(ModeMismatchError):
            repair_prob_closed_form(ex2, 1.0)

    def test_vectorised(self, ex1):
        v = repair_prob_closed_form(ex1, np.array([0.5, 1.0]))
        assert v.shape == (2,) and v[1] == pytest.approx(repair_prob_closed_form(ex1, 1.0))


class TestStationary:
    def test_absorbing_empty_state(self):
        m = constant_model(0.0, 1.0, 1.0, 0.0)
        s = stationary_oracle(m, 8)
        assert s.p[0] == pytest.approx(1.0, abs=1e-12)

    def test_mm1_geometric(self):
        n = 40
        s = stationary_oracle(constant_model(1.0, 2.0, 0.7, 0.0), n)
        levels = n - 1
        want = 0.5 ** np.arange(levels)
        want /= want.sum()
        assert s.r == pytest.approx(0.0, abs=1e-12)
        assert np.max(np.abs(s.p - want)) < 1e-8

    def test_long_run_matches(self):
        m = constant_model(10.0, 3.0, 3.0, 2.5, beta=0.7, k=100)
        tr = integrate(m, ProbabilityState.empty(200), 20.0, 200, keep_states=True)
        assert np.max(np.abs(tr.states[-1] - stationary_oracle(m, 200).vector)) < 1e-6

    def test_needs_constant_rates(self, ex1):
        with pytest.raises(ValueError):
            stationary_oracle(ex1, 110)

    def test_singular(self):
        # no transitions at all: every distribution is stationary
        with pytest.raises(SingularSystemError):
            stationary_oracle(constant_model(0.0, 0.0, 0.0, 0.0), 5)

    @given(st.floats(0.1, 5), st.floats(0.5, 5), st.floats(0.1, 5), st.floats(0.05, 3), st.floats(0, 1))
    def test_residual(self, lam, mu, eta, gamma, beta):
        m = constant_model(lam, mu, eta, gamma, beta=beta, k=3)
        s = stationary_oracle(m, 30)
        assert np.sum(np.abs(build_A(m, 0.0, 30).matrix @ s.vector)) < 1e-10
        assert s.vector.sum() == pytest.approx(1.0, abs=1e-12)


class TestLimitingCycle:
    def test_example1(self, ex1):
        w = limiting_cycle(ex1, 200, 1e-3, (19.0, 20.0))
        assert w.periodicity_defect < 1e-5
        assert w.grid[0] == pytest.approx(19.0)

    def test_constant_model_flat(self):
        m = constant_model(2.0, 3.0, 1.0, 1.0, k=2)
        w = limiting_cycle(m, 40, 1e-3, (19.0, 20.0))
        s = stationary_oracle(m, 40)
        assert np.max(np.abs(w.empty_prob - s.p[0])) < 1e-6

    def test_not_converged(self):
        slow = QueueModel(trig(1.0, sin=1.0), trig(1.5, cos=0.5), RateFunction.constant(1.0),
                          RateFunction.constant(0.05), CatastropheFamily.uniform(RateFunction.constant(0.01)), 1)
        with pytest.raises(NotConvergedError):
            limiting_cycle(slow, 60, 1e-3, (1.0, 2.0))

    def test_window_length(self, ex1):
        with pytest.raises(ValueError):
            limiting_cycle(ex1, 110, 1e-3, (3.0, 5.0))


class TestTruncationRefine:
    def test_no_arrivals_accepts_start(self):
        m = QueueModel(RateFunction.constant(0.0), trig(2.0, cos=1.0), RateFunction.constant(1.0),
                       trig(1.0, sin=0.5), CatastropheFamily.uniform(RateFunction.constant(1.0)), 5)
        assert truncation_refine(m, 20.0, 8) == 8

    def test_budget(self, ex1):
        with pytest.raises(BudgetExceededError):
            truncation_refine(ex1, 20.0, 103, budget=150)

    def test_start_floor(self, ex1):
        with pytest.raises(DimensionError):
            truncation_refine(ex1, 3.0, 50)
