import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import BANDIT_05_09, INV_LN2, LB_TWO_STATE, MU_NO_NAV, MU_STAR
from mdplab import catalog
from mdplab.confusing import unlikelihood
from mdplab.core import enumerate_det_policies, policy_eval, solve_optimal
from mdplab.divergence import kl_bernoulli
from mdplab.errors import PreconditionError
from mdplab.lowerbound import (bandit_closed_form, c_value, lower_bound_general, no_navigation_bound,
                               recurrent_closed_form, switching_bandit_bound)
from mdplab.model import Mdp, RewardDist
from mdplab.structure import invariant_system, is_invariant

seeds = st.integers(0, 2**32 - 1)


class TestGeneral:
    def test_two_state(self, two_state):
        rep = lower_bound_general(two_state)
        assert rep.converged
        assert rep.value == pytest.approx(LB_TWO_STATE, rel=1e-9)
        assert rep.mu == pytest.approx([0.0, MU_STAR, MU_STAR], rel=1e-9)
        assert is_invariant(rep.mu, invariant_system(two_state))

    def test_minor_navigation_same_value(self, two_state):
        full = lower_bound_general(two_state).value
        minor = lower_bound_general(two_state, navigation="minor").value
        assert minor == pytest.approx(full, rel=1e-6)

    @pytest.mark.parametrize("t", [0.5, 2.0])
    def test_rhs_scaling(self, two_state, t):
        base = lower_bound_general(two_state)
        scaled = lower_bound_general(two_state, rhs=t)
        assert scaled.value == pytest.approx(t * base.value, rel=1e-6)
        assert scaled.mu == pytest.approx(t * base.mu, rel=1e-6, abs=1e-9)

    def test_history_monotone(self, two_state):
        rep = lower_bound_general(catalog.random_model(np.random.default_rng(2), 3, 2))
        assert all(b >= a - 1e-9 for a, b in zip(rep.history, rep.history[1:]))

    def test_constraints_hold_at_optimum(self):
        rng = np.random.default_rng(12)
        for _ in range(5):
            m = catalog.random_model(rng, 3, 2)
            sol = solve_optimal(m)
            rep = lower_bound_general(m, solution=sol)
            for pi in enumerate_det_policies(m):
                if policy_eval(m, pi).gain.min() < sol.gain_star - 1e-9:
                    assert unlikelihood(m, pi, rep.mu, solution=sol) >= 1 - 1e-6

    def test_saturated_rewards_give_zero(self):
        m = Mdp(["s1", "s2"], {"s1": ["loop", "go"], "s2": ["back"]},
                {"loop": {"s1": 1.0}, "go": {"s2": 1.0}, "back": {"s1": 1.0}},
                {"loop": RewardDist.dirac(2.0), "go": RewardDist.bernoulli(0.5),
                 "back": RewardDist.bernoulli(0.5)})
        rep = lower_bound_general(m)
        assert rep.value == 0.0 and not rep.active_policies

    def test_constructive_relaxation(self, two_state):
        fixed = lower_bound_general(two_state).value
        constructive = lower_bound_general(two_state, "constructive").value
        assert constructive == pytest.approx(INV_LN2, rel=1e-7)
        assert constructive <= fixed

    def test_neighborhood_restriction(self, two_state):
        rep = lower_bound_general(two_state, neighborhood_k=1)
        assert rep.value == pytest.approx(LB_TWO_STATE, rel=1e-9)


class TestBandit:
    def test_example(self):
        assert bandit_closed_form(catalog.bandit([0.5, 0.9])).value == pytest.approx(BANDIT_05_09, rel=1e-12)

    def test_thirds(self):
        assert bandit_closed_form(catalog.bandit([1 / 3, 2 / 3])).value == pytest.approx(INV_LN2, rel=1e-12)

    def test_equal_arms(self):
        assert bandit_closed_form(catalog.bandit([0.4, 0.4])).value == 0.0

    def test_interior_condition(self):
        with pytest.raises(PreconditionError, match="interior"):
            bandit_closed_form(catalog.bandit([0.4, 1.0]))

    @given(st.lists(st.floats(0.02, 0.95), min_size=2, max_size=5))
    @settings(max_examples=25)
    def test_general_matches(self, means):
        m = catalog.bandit(means)
        closed = bandit_closed_form(m).value
        assert lower_bound_general(m).value == pytest.approx(closed, rel=1e-6, abs=1e-9)
        assert no_navigation_bound(m).value == pytest.approx(closed, rel=1e-6, abs=1e-9)


class TestRecurrent:
    def test_bandit_c_value(self):
        m = catalog.bandit([0.5, 0.9])
        assert c_value(m, "arm1") == pytest.approx(kl_bernoulli(0.5, 0.9), rel=1e-6)
        assert recurrent_closed_form(m).value == pytest.approx(BANDIT_05_09, rel=1e-6)

    def test_two_state_refused(self, two_state):
        with pytest.raises(PreconditionError, match="not optimally recurrent"):
            recurrent_closed_form(two_state)

    def test_ergodic_matches_general(self):
        rng = np.random.default_rng(13)
        for _ in range(3):
            m = catalog.random_ergodic_model(rng, 3, 2)
            closed = recurrent_closed_form(m)
            assert lower_bound_general(m, "constructive").value == pytest.approx(closed.value, abs=1e-4)


class TestSwitching:
    def test_two_arms(self):
        m = catalog.switching_bandit([0.4, 0.7], 1.0)
        sol = solve_optimal(m)
        gap = sol.gaps[m.pair("arm1->arm1")]
        assert switching_bandit_bound(m).value == pytest.approx(gap / kl_bernoulli(0.4, 0.7), rel=1e-12)

    def test_invariance(self):
        values = [switching_bandit_bound(catalog.switching_bandit([0.4, 0.7], lam)).value for lam in (1.0, 10.0)]
        assert values[0] == pytest.approx(values[1], abs=1e-12)

    def test_equal_means(self):
        assert switching_bandit_bound(catalog.switching_bandit([0.5, 0.5], 1.0)).value == 0.0

    def test_shape_checked(self, two_state):
        with pytest.raises(PreconditionError, match="shape"):
            switching_bandit_bound(two_state)


class TestNoNavigation:
    def test_two_state(self, two_state):
        rep = no_navigation_bound(two_state)
        assert rep.mu[1] == pytest.approx(MU_NO_NAV, rel=1e-9)
        assert math.isinf(rep.mu[0]) and math.isinf(rep.mu[2])
        assert rep.value == pytest.approx(INV_LN2, rel=1e-9)

    @given(seeds)
    @settings(max_examples=15)
    def test_relaxation(self, seed):
        rng = np.random.default_rng(seed)
        m = catalog.random_model(rng, int(rng.integers(2, 4)), 2)
        sol = solve_optimal(m)
        assert no_navigation_bound(m, sol).value <= lower_bound_general(m, solution=sol).value + 1e-8
