import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mdplab import catalog
from mdplab.core import (diameter, enumerate_det_policies, first_passage, gain_optimal, is_communicating,
                         optimal_gain_vector, policy_eval, solve_optimal, validate)
from mdplab.errors import ModelError, PreconditionError
from mdplab.model import Mdp, Policy, RewardDist, model_from_json
from mdplab.simulator import policy_agent, simulate_batch

seeds = st.integers(0, 2**32 - 1)


def loop_model(value=0.5):
    return Mdp(["s"], {"s": ["stay"]}, {"stay": {"s": 1.0}}, {"stay": RewardDist.dirac(value)})


def disconnected():
    return Mdp(["a", "b"], {"a": ["stay-a"], "b": ["stay-b"]},
               {"stay-a": {"a": 1.0}, "stay-b": {"b": 1.0}},
               {"stay-a": RewardDist.dirac(1.0), "stay-b": RewardDist.dirac(0.0)})


class TestModel:
    def test_json_round_trip(self, two_state):
        data = two_state.to_json()
        shuffled = json.loads(json.dumps({k: data[k] for k in reversed(list(data))}))
        assert model_from_json(shuffled) == two_state

    def test_duplicate_action_rejected(self):
        with pytest.raises(ModelError, match="used twice"):
            Mdp(["a", "b"], {"a": ["x"], "b": ["x"]}, {"x": {"a": 1.0}},
                {"x": RewardDist.dirac(0.0)})

    def test_unknown_target_rejected(self):
        with pytest.raises(ModelError, match="unknown state"):
            Mdp(["a"], {"a": ["x"]}, {"x": {"z": 1.0}}, {"x": RewardDist.dirac(0.0)})

    def test_zero_variance_gaussian_is_dirac(self):
        assert RewardDist.gaussian(0.3, 0.0) == RewardDist.dirac(0.3)

    def test_bernoulli_mean_range(self):
        with pytest.raises(ModelError):
            RewardDist.bernoulli(1.2)


class TestValidate:
    def test_two_state(self, two_state):
        rep = validate(two_state)
        assert rep.valid and (rep.n_states, rep.n_pairs) == (2, 3)

    def test_non_stochastic_row(self):
        m = Mdp(["a", "b"], {"a": ["x"], "b": ["y"]}, {"x": {"a": 0.5, "b": 0.4}, "y": {"a": 1.0}},
                {"x": RewardDist.dirac(0.0), "y": RewardDist.dirac(0.0)})
        rep = validate(m)
        assert not rep.valid and "kernel row not stochastic" in rep.summary()

    def test_smallest_model(self):
        assert validate(loop_model()).valid


class TestCommunication:
    def test_two_state_diameter(self, two_state):
        assert is_communicating(two_state)
        assert diameter(two_state) == 1.0

    def test_single_state(self):
        assert is_communicating(loop_model()) and diameter(loop_model()) == 0.0

    def test_disconnected(self):
        assert not is_communicating(disconnected())
        with pytest.raises(PreconditionError, match="infinite diameter"):
            diameter(disconnected())

    def test_solve_refuses_non_communicating(self):
        with pytest.raises(PreconditionError, match="infinite diameter"):
            solve_optimal(disconnected())

    def test_first_passage_stochastic(self):
        # from a, one action reaches b w.p. 1/2 per step; hitting time 2
        m = Mdp(["a", "b"], {"a": ["try"], "b": ["back"]}, {"try": {"a": 0.5, "b": 0.5}, "back": {"a": 1.0}},
                {"try": RewardDist.dirac(0.0), "back": RewardDist.dirac(0.0)})
        fp = first_passage(m, 1)
        assert fp.times == pytest.approx([2.0, 0.0])
        assert diameter(m) == pytest.approx(2.0)


class TestPolicyEval:
    def test_loop_policy(self, two_state, two_state_policies):
        ev = policy_eval(two_state, two_state_policies["loop"])
        assert ev.gain == pytest.approx([2 / 3, 2 / 3])
        assert ev.recurrent_classes == ((0,),) and ev.transient_states == (1,)

    def test_cycle_policy(self, two_state, two_state_policies):
        ev = policy_eval(two_state, two_state_policies["cycle"])
        assert ev.gain == pytest.approx([0.5, 0.5])

    def test_dirac_loop(self):
        ev = policy_eval(loop_model(0.7), Policy.uniform(loop_model(0.7)))
        assert ev.gain == pytest.approx([0.7]) and ev.bias == pytest.approx([0.0])

    @given(seeds)
    def test_poisson_equation(self, seed):
        rng = np.random.default_rng(seed)
        m = catalog.random_model(rng, int(rng.integers(1, 5)), 3)
        pol = Policy.uniform(m)
        ev = policy_eval(m, pol)
        P = ev.chain
        assert np.allclose(ev.gain + ev.bias, ev.rewards + P @ ev.bias, atol=1e-9)
        assert np.allclose(P @ ev.gain, ev.gain, atol=1e-9)


class TestSolveOptimal:
    def test_two_state(self, two_state):
        sol = solve_optimal(two_state)
        assert sol.gain_star == pytest.approx(2 / 3)
        assert sol.gaps == pytest.approx([0.0, 1 / 3, 0.0], abs=1e-12)
        assert [two_state.actions[x] for x in sol.optimal_pairs] == ["loop"]

    def test_bandit(self):
        sol = solve_optimal(catalog.bandit([0.5, 0.9]))
        assert sol.gain_star == pytest.approx(0.9)
        assert sol.gaps == pytest.approx([0.4, 0.0])

    def test_two_circles(self):
        m = catalog.two_circles()
        sol = solve_optimal(m)
        assert sol.gain_star == pytest.approx(2.0)
        inner = {x for x, a in enumerate(m.actions) if a.startswith("in") and "->in" in a}
        assert set(sol.optimal_pairs) == inner

    @pytest.mark.parametrize("model,count", [
        (catalog.two_state(), 2),
        (catalog.random_ergodic_model(np.random.default_rng(0), 3, 2), 8),
        (catalog.bandit([0.1, 0.2, 0.3, 0.4]), 4),
    ])
    def test_policy_count(self, model, count):
        assert len(list(enumerate_det_policies(model))) == count

    @given(seeds)
    def test_methods_agree(self, seed):
        rng = np.random.default_rng(seed)
        m = catalog.random_model(rng, int(rng.integers(1, 5)), 3)
        a = solve_optimal(m, "enumerate")
        b = solve_optimal(m, "policy_iteration")
        assert abs(a.gain_star - b.gain_star) <= 1e-8
        assert a.weakly_optimal == b.weakly_optimal

    @given(seeds)
    def test_gaps_nonnegative_and_xopt_contains_recurrent_pairs(self, seed):
        rng = np.random.default_rng(seed)
        m = catalog.random_model(rng, int(rng.integers(1, 5)), 3)
        sol = solve_optimal(m, "enumerate")
        assert (sol.gaps >= -1e-12).all()
        opt = set(sol.optimal_pairs)
        for pol in sol.optimal_det_policies:
            assert set(policy_eval(m, pol).recurrent_pairs) <= opt
        assert optimal_gain_vector(m) == pytest.approx(np.full(m.n_states, sol.gain_star), abs=1e-9)

    def test_xopt_keeps_pairs_transient_under_uniform_optimal_policy(self):
        # at A both actions are weakly optimal, B's way back is not: the uniform
        # weakly-optimal policy drifts to B, yet "loop-A" is recurrent for an optimal policy
        m = Mdp(["A", "B"], {"A": ["loop-A", "go-B"], "B": ["loop-B", "go-A"]},
                {"loop-A": {"A": 1.0}, "go-B": {"B": 1.0}, "loop-B": {"B": 1.0}, "go-A": {"A": 1.0}},
                {"loop-A": RewardDist.dirac(1.0), "go-B": RewardDist.dirac(1.0),
                 "loop-B": RewardDist.dirac(1.0), "go-A": RewardDist.dirac(0.0)})
        sol = solve_optimal(m)
        uniform = policy_eval(m, Policy.uniform(m, sol.weakly_optimal))
        assert m.pair("loop-A") not in uniform.recurrent_pairs
        assert sorted(m.actions[x] for x in sol.optimal_pairs) == ["loop-A", "loop-B"]
        assert gain_optimal(m, Policy.deterministic(m, {"A": "loop-A", "B": "loop-B"}), sol)


@pytest.mark.slow
@given(seeds)
def test_gain_matches_simulated_average(seed):
    rng = np.random.default_rng(seed)
    m = catalog.random_ergodic_model(rng, 3, 2)
    pol = next(iter(enumerate_det_policies(m)))
    g = policy_eval(m, pol).gain[0]
    batch = simulate_batch(m, policy_agent(pol), 0, 3000, range(40))
    means = m.r[batch.pairs].mean(axis=1)
    se = means.std(ddof=1) / np.sqrt(len(means))
    # burn-in bias is O(sp(h)/T); allow it on top of 3 SE
    assert abs(means.mean() - g) <= 3 * se + 0.01
