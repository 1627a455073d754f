"""Reference instances and random generators used by tests, docs and the CLI."""

from __future__ import annotations

import numpy as np

from .core import is_communicating
from .model import Mdp, Policy, RewardDist


def two_state() -> Mdp:
    """Two states; s1 may loop (mean 2/3) or move to s2 (mean 1/3); s2 returns (mean 2/3)."""
    return Mdp(
        ["s1", "s2"],
        {"s1": ["loop", "s1->s2"], "s2": ["s2->s1"]},
        {"loop": {"s1": 1.0}, "s1->s2": {"s2": 1.0}, "s2->s1": {"s1": 1.0}},
        {"loop": RewardDist.bernoulli(2 / 3), "s1->s2": RewardDist.bernoulli(1 / 3),
         "s2->s1": RewardDist.bernoulli(2 / 3)},
    )


def two_state_policies(model: Mdp | None = None) -> dict[str, Policy]:
    model = two_state() if model is None else model
    return {
        "loop": Policy.deterministic(model, {"s1": "loop", "s2": "s2->s1"}),
        "cycle": Policy.deterministic(model, {"s1": "s1->s2", "s2": "s2->s1"}),
    }


def two_circles(outer_mean: float = 1.0) -> Mdp:
    """Inner 5-cycle scoring N(2,1), outer 5-cycle scoring N(outer_mean,1), two N(0,1) links."""
    inner = [f"in{k}" for k in range(1, 6)]
    outer = [f"out{k}" for k in range(1, 6)]
    actions, kernel, rewards = {}, {}, {}

    def edge(src, dst, dist):
        name = f"{src}->{dst}"
        actions.setdefault(src, []).append(name)
        kernel[name] = {dst: 1.0}
        rewards[name] = dist

    # inner circle runs in1 -> in5 -> in4 -> in3 -> in2 -> in1
    for k in range(5):
        edge(inner[k], inner[(k - 1) % 5], RewardDist.gaussian(2.0, 1.0))
    for k in range(5):
        edge(outer[k], outer[(k + 1) % 5], RewardDist.gaussian(outer_mean, 1.0))
    edge("in1", "out1", RewardDist.gaussian(0.0, 1.0))
    edge("out2", "in2", RewardDist.gaussian(0.0, 1.0))
    return Mdp(inner + outer, actions, kernel, rewards)


def two_circles_alternative() -> Mdp:
    """The two-circle model with the outer circle raised to 2.1."""
    return two_circles(outer_mean=2.1)


def contraction_figure() -> Mdp:
    """Three states; the pairs ``sec`` (at 1) and ``dag`` (at 2) form a closed set."""
    return Mdp(
        ["1", "2", "3"],
        {"1": ["star", "sec"], "2": ["dag"], "3": ["ddag"]},
        {"star": {"1": 0.6, "3": 0.4}, "sec": {"1": 0.5, "2": 0.5},
         "dag": {"1": 0.7, "2": 0.3}, "ddag": {"1": 0.4, "2": 0.4, "3": 0.2}},
        {"star": RewardDist.bernoulli(0.2), "sec": RewardDist.bernoulli(0.8),
         "dag": RewardDist.bernoulli(0.7), "ddag": RewardDist.bernoulli(0.1)},
    )


def bandit(means, kind: str = "bernoulli", var: float = 1.0) -> Mdp:
    """Single-state model with one arm per mean."""
    arms = [f"arm{k + 1}" for k in range(len(means))]
    dist = (lambda m: RewardDist.bernoulli(m)) if kind == "bernoulli" else (
        lambda m: RewardDist.gaussian(m, var))
    return Mdp(["s"], {"s": arms}, {a: {"s": 1.0} for a in arms},
               {a: dist(m) for a, m in zip(arms, means)})


def switching_bandit(means, switch_cost: float) -> Mdp:
    """Arms as states; staying pulls the arm, moving costs ``switch_cost`` deterministically."""
    names = [f"arm{k + 1}" for k in range(len(means))]
    actions, kernel, rewards = {}, {}, {}
    for i, src in enumerate(names):
        for j, dst in enumerate(names):
            a = f"{src}->{dst}"
            actions.setdefault(src, []).append(a)
            kernel[a] = {dst: 1.0}
            rewards[a] = (RewardDist.bernoulli(means[i]) if i == j
                          else RewardDist.dirac(-switch_cost))
    return Mdp(names, actions, kernel, rewards)


def random_model(rng: np.random.Generator, n_states: int, max_actions: int = 2,
                 density: float = 0.6, reward: str = "bernoulli", min_actions: int = 1,
                 reward_high: float = 1.0) -> Mdp:
    """Random communicating model with sparse kernels (rejection sampling)."""
    for _ in range(1000):
        states = [f"s{k + 1}" for k in range(n_states)]
        actions, kernel, rewards = {}, {}, {}
        for i, s in enumerate(states):
            k = int(rng.integers(min_actions, max_actions + 1))
            actions[s] = [f"{s}a{j + 1}" for j in range(k)]
            for a in actions[s]:
                support = rng.random(n_states) < density
                if not support.any():
                    support[rng.integers(n_states)] = True
                w = rng.dirichlet(np.ones(int(support.sum())))
                kernel[a] = {states[t]: float(p) for t, p in zip(np.flatnonzero(support), w)}
                if reward == "bernoulli":
                    rewards[a] = RewardDist.bernoulli(float(rng.uniform(0.0, reward_high)))
                else:
                    rewards[a] = RewardDist.gaussian(float(rng.normal()), float(rng.uniform(0.5, 2.0)))
        model = Mdp(states, actions, kernel, rewards)
        # rows built from floats may miss 1 by an ulp; renormalise exactly
        P = model.P / model.P.sum(axis=1, keepdims=True)
        model = Mdp.from_arrays(model.states, model.pairs, P, model.rewards)
        if is_communicating(model):
            return model
    raise RuntimeError("could not sample a communicating model")


def random_ergodic_model(rng: np.random.Generator, n_states: int = 3, n_actions: int = 2,
                         reward_high: float = 0.9) -> Mdp:
    """Full-support kernels, Bernoulli rewards: every policy is ergodic."""
    states = [f"s{k + 1}" for k in range(n_states)]
    pairs, rows, rewards = [], [], []
    for s in states:
        for j in range(n_actions):
            pairs.append((s, f"{s}a{j + 1}"))
            rows.append(rng.dirichlet(np.ones(n_states)))
            rewards.append(RewardDist.bernoulli(float(rng.uniform(0.05, reward_high))))
    return Mdp.from_arrays(states, pairs, np.array(rows), rewards)
