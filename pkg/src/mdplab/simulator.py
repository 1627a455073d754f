"""Seeded trajectories and Monte-Carlo checks of exact identities.

Every run owns a Philox generator seeded with its seed and draws a (T, 3)
block of uniforms up front: column 0 picks the action, column 1 the next
state (inverse CDF over the kernel row) and column 2 the reward (inverse
CDF of the reward distribution).  A batch of seeds therefore reproduces
the single-seed runs bit for bit.
"""

from __future__ import annotations

import dataclasses
import io
import json
import math
from collections.abc import Sequence

import numpy as np

from .core import OptimalSolution, first_passage, solve_optimal
from .divergence import kl_pairs, log_likelihood_arrays
from .errors import InputError, PreconditionError
from .lp import solve_lp
from .model import Mdp, Policy
from .structure import contract, invariant_system, is_closed


# ---------------------------------------------------------------------------
# agents

@dataclasses.dataclass(frozen=True)
class PolicyAgent:
    policy: Policy
    name: str = "policy"

    def describe(self) -> str:
        return self.name


@dataclasses.dataclass(frozen=True)
class ForcedExploreAgent:
    """Plays the uniform weakly-optimal policy, except when some pair is under-explored.

    A pair is under-explored at step t when its count is below
    ``c * mu[x] * ln t``.  The agent then plays it if it sits at the current
    state, or walks towards the closest such pair by expected hitting time.
    """

    mu: np.ndarray
    c: float
    fallback: Policy

    def describe(self) -> str:
        return f"forced_explore(c={self.c:g})"


def policy_agent(policy: Policy, name: str = "policy") -> PolicyAgent:
    return PolicyAgent(policy, name)


def uniform_random(model: Mdp) -> PolicyAgent:
    return PolicyAgent(Policy.uniform(model), "uniform_random")


def forced_explore(model: Mdp, mu, c: float = 1.0, solution: OptimalSolution | None = None) -> ForcedExploreAgent:
    sol = solve_optimal(model) if solution is None else solution
    mu = np.asarray(mu, dtype=float)
    mu = np.where(np.isfinite(mu), mu, 0.0)
    return ForcedExploreAgent(mu, float(c), Policy.uniform(model, sol.weakly_optimal))


# ---------------------------------------------------------------------------
# trajectories

@dataclasses.dataclass(frozen=True)
class Trajectory:
    model: Mdp
    states: np.ndarray    # S_0 .. S_T
    pairs: np.ndarray     # X_0 .. X_{T-1}
    rewards: np.ndarray
    seed: int
    agent: str

    @property
    def initial_state(self) -> int:
        return int(self.states[0])

    @property
    def horizon(self) -> int:
        return len(self.pairs)

    def counts(self) -> np.ndarray:
        return np.bincount(self.pairs, minlength=self.model.n_pairs)

    def to_jsonl(self) -> str:
        buf = io.StringIO()
        m = self.model
        for t, (s, x, r, s2) in enumerate(zip(self.states[:-1], self.pairs, self.rewards, self.states[1:]), 1):
            buf.write(json.dumps({"t": t, "s": m.states[s], "a": m.actions[x],
                                  "r": float(r), "s_next": m.states[s2]}) + "\n")
        return buf.getvalue()


@dataclasses.dataclass(frozen=True)
class Batch:
    """Runs of one agent stacked along axis 0 (one row per seed)."""

    model: Mdp
    states: np.ndarray
    pairs: np.ndarray
    rewards: np.ndarray
    seeds: tuple[int, ...]
    agent: str

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(self.model, self.states[i], self.pairs[i], self.rewards[i], self.seeds[i], self.agent)


def _uniforms(seed: int, T: int) -> np.ndarray:
    return np.random.Generator(np.random.Philox(seed)).random((T, 3))


def _kernel_cdf(model: Mdp) -> np.ndarray:
    cdf = np.cumsum(model.P, axis=1)
    for x in range(model.n_pairs):
        last = int(np.flatnonzero(model.P[x] > 0)[-1])
        cdf[x, last:] = 1.0
    return cdf


def _policy_cdf(model: Mdp, policy: Policy) -> tuple[np.ndarray, np.ndarray]:
    """Per-state cumulative action probabilities padded with 1, and the first pair index."""
    width = max(len(b) for b in model.state_pairs)
    cdf = np.ones((model.n_states, width))
    start = np.array([b.start for b in model.state_pairs])
    for s, block in enumerate(model.state_pairs):
        probs = policy.probs[block.start:block.stop]
        c = np.cumsum(probs)
        last = int(np.flatnonzero(probs > 0)[-1])
        c[last:] = 1.0
        cdf[s, :len(c)] = c
    return cdf, start


def _fill_rewards(model: Mdp, pairs: np.ndarray, u: np.ndarray) -> np.ndarray:
    rewards = np.zeros(pairs.shape)
    for x in range(model.n_pairs):
        sel = pairs == x
        if sel.any():
            rewards[sel] = model.rewards[x].from_uniform(u[sel])
    return rewards


def _check(model: Mdp, s0, T: int) -> int:
    if T < 1:
        raise InputError("horizon must be >= 1")
    if isinstance(s0, str):
        if s0 not in model.state_index:
            raise InputError(f"unknown start state: {s0}")
        return model.state_index[s0]
    if not 0 <= int(s0) < model.n_states:
        raise InputError(f"start state index out of range: {s0}")
    return int(s0)


def simulate_batch(model: Mdp, agent: PolicyAgent, s0, T: int, seeds: Sequence[int]) -> Batch:
    """Vectorised runs of a stationary policy, one per seed."""
    s0 = _check(model, s0, T)
    seeds = tuple(int(s) for s in seeds)
    U = np.stack([_uniforms(seed, T) for seed in seeds])
    n = len(seeds)
    act_cdf, start = _policy_cdf(model, agent.policy)
    ker_cdf = _kernel_cdf(model)
    states = np.empty((n, T + 1), dtype=np.int64)
    pairs = np.empty((n, T), dtype=np.int64)
    states[:, 0] = s0
    s = states[:, 0]
    for t in range(T):
        a = (U[:, t, 0, None] >= act_cdf[s]).sum(axis=1)
        x = start[s] + a
        s = (U[:, t, 1, None] >= ker_cdf[x]).sum(axis=1)
        pairs[:, t] = x
        states[:, t + 1] = s
    rewards = _fill_rewards(model, pairs, U[:, :, 2])
    return Batch(model, states, pairs, rewards, seeds, agent.describe())


def _simulate_forced(model: Mdp, agent: ForcedExploreAgent, s0: int, T: int, seed: int) -> Trajectory:
    U = _uniforms(seed, T)
    act_cdf, start = _policy_cdf(model, agent.fallback)
    ker_cdf = _kernel_cdf(model)
    routes = [first_passage(model, t) for t in range(model.n_states)]
    counts = np.zeros(model.n_pairs)
    explored = agent.mu > 0
    states = np.empty(T + 1, dtype=np.int64)
    pairs = np.empty(T, dtype=np.int64)
    states[0] = s = s0
    for t in range(T):
        need = agent.c * agent.mu * math.log(t + 1)
        under = np.flatnonzero(explored & (counts < need))
        x = None
        if under.size:
            here = [y for y in under if model.pair_state[y] == s]
            if here:
                x = int(here[0])
            else:
                target = min(under, key=lambda y: (routes[model.pair_state[y]].times[s], y))
                x = routes[model.pair_state[target]].choice[s]
        if x is None:
            x = int(start[s] + (U[t, 0] >= act_cdf[s]).sum())
        pairs[t] = x
        counts[x] += 1
        s = int((U[t, 1] >= ker_cdf[x]).sum())
        states[t + 1] = s
    rewards = _fill_rewards(model, pairs, U[:, 2])
    return Trajectory(model, states, pairs, rewards, seed, agent.describe())


def simulate(model: Mdp, agent, s0, T: int, seed: int) -> Trajectory:
    s0 = _check(model, s0, T)
    if isinstance(agent, ForcedExploreAgent):
        return _simulate_forced(model, agent, s0, T, int(seed))
    return simulate_batch(model, agent, s0, T, [seed]).trajectory(0)


# ---------------------------------------------------------------------------
# quasi-flow identity

def quasi_flow_residual(traj: Trajectory, model: Mdp, closed_set) -> np.ndarray:
    """Integer residuals (one row per time t = 0..T-1, one column per contracted state).

    With C the closed set and [s] the contracted state of s, the residual at t is
    #{u <= t : S_u in [s], X_u not in C} - #{u < t : X_u not in C, S_{u+1} in [s]}
    - 1{S_0 in [s]} + 1{X_t in C, S_t in [s]}, identically zero.
    """
    ids = sorted({model.pair(x) for x in closed_set})
    check = is_closed(model, ids)
    if not check:
        raise PreconditionError(f"contraction of non-closed set ({check.reason})")
    minor = contract(model, ids)
    block = np.asarray(minor.state_map)
    in_c = np.zeros(model.n_pairs, bool)
    in_c[ids] = True
    k = minor.minor.n_states
    S = block[traj.states]
    X_in = in_c[traj.pairs]
    T = len(traj.pairs)
    here = np.zeros((T, k), dtype=np.int64)
    here[np.arange(T), S[:-1]] = 1
    leave = here * (~X_in)[:, None]
    enter = np.zeros((T, k), dtype=np.int64)
    enter[np.arange(T), S[1:]] = (~X_in).astype(np.int64)
    start = np.zeros(k, dtype=np.int64)
    start[S[0]] = 1
    entered_before = np.vstack([np.zeros((1, k), dtype=np.int64), np.cumsum(enter, axis=0)[:-1]])
    return np.cumsum(leave, axis=0) - entered_before - start + here * X_in[:, None]


# ---------------------------------------------------------------------------
# pseudo-regret decomposition

@dataclasses.dataclass(frozen=True)
class PseudoRegretReport:
    regret_mean: float
    gap_sum_mean: float
    difference: float
    standard_error: float
    bound: float          # span of h* plus three standard errors
    passed: bool


def pseudo_regret_check(model: Mdp, policy: Policy, s0, T: int, seeds: Sequence[int],
                        solution: OptimalSolution | None = None) -> PseudoRegretReport:
    """E[T g* - sum R] and E[sum of gaps] differ by at most sp(h*) (Monte Carlo)."""
    sol = solve_optimal(model) if solution is None else solution
    batch = simulate_batch(model, PolicyAgent(policy), s0, T, seeds)
    regret = T * sol.gain_star - batch.rewards.sum(axis=1)
    gap_sum = np.clip(sol.gaps, 0.0, None)[batch.pairs].sum(axis=1)
    diff = regret - gap_sum
    se = float(diff.std(ddof=1) / math.sqrt(len(diff))) if len(diff) > 1 else 0.0
    bound = sol.span_bias + 3.0 * se
    mean = float(diff.mean())
    return PseudoRegretReport(float(regret.mean()), float(gap_sum.mean()), mean, se, bound,
                              abs(mean) <= bound + 1e-9)


# ---------------------------------------------------------------------------
# navigation constraints

@dataclasses.dataclass(frozen=True)
class NavigationCurve:
    horizons: tuple[int, ...]
    distances: tuple[float, ...]   # nan where undefined (no suboptimal visit)
    measures: tuple[np.ndarray, ...]

    def defined(self) -> list[bool]:
        return [not math.isnan(d) for d in self.distances]


def polytope_distance(model: Mdp, mu, solution: OptimalSolution | None = None) -> float:
    """L-infinity distance from mu to the invariant probabilities of model / X_opt."""
    sol = solve_optimal(model) if solution is None else solution
    A = invariant_system(contract(model, sol.optimal_pairs)).matrix
    mu = np.asarray(mu, dtype=float)
    n = model.n_pairs
    eye = np.eye(n)
    one = np.ones((n, 1))
    # variables: nu (n), t
    A_ub = np.vstack([np.hstack([eye, -one]), np.hstack([-eye, -one])])
    b_ub = np.concatenate([mu, -mu])
    A_eq = np.vstack([np.hstack([A, np.zeros((A.shape[0], 1))]),
                      np.hstack([np.ones((1, n)), np.zeros((1, 1))])])
    b_eq = np.concatenate([np.zeros(A.shape[0]), [1.0]])
    c = np.zeros(n + 1)
    c[-1] = 1.0
    return float(solve_lp(c, A_ub, b_ub, A_eq, b_eq).value)


def navigation_distance(model: Mdp, agent, s0, horizons: Sequence[int], seeds: Sequence[int],
                        solution: OptimalSolution | None = None) -> NavigationCurve:
    sol = solve_optimal(model) if solution is None else solution
    horizons = tuple(sorted(int(h) for h in horizons))
    T = horizons[-1]
    off = ~sol.optimal_mask()
    totals = np.zeros((len(horizons), model.n_pairs))
    for seed in seeds:
        traj = simulate(model, agent, s0, T, seed)
        for i, h in enumerate(horizons):
            totals[i] += np.bincount(traj.pairs[:h], minlength=model.n_pairs)
    distances, measures = [], []
    for i in range(len(horizons)):
        counts = totals[i] * off
        if counts.sum() == 0:
            distances.append(math.nan)
            measures.append(np.zeros(model.n_pairs))
            continue
        mu = counts / counts.sum()
        measures.append(mu)
        distances.append(polytope_distance(model, mu, sol))
    return NavigationCurve(horizons, tuple(distances), tuple(measures))


# ---------------------------------------------------------------------------
# log-likelihood identity

@dataclasses.dataclass(frozen=True)
class LoglikReport:
    mean: float
    standard_error: float
    expected: float
    passed: bool
    support_violations: int


def expected_counts(model: Mdp, policy: Policy, s0, T: int) -> np.ndarray:
    """E[N_T(x)] by propagating the state distribution."""
    s0 = _check(model, s0, T)
    d = np.zeros(model.n_states)
    d[s0] = 1.0
    counts = np.zeros(model.n_pairs)
    for _ in range(T):
        pair_dist = d[model.pair_state] * policy.probs
        counts += pair_dist
        d = pair_dist @ model.P
    return counts


def loglik_check(m1: Mdp, m2: Mdp, policy: Policy, s0, T: int, seeds: Sequence[int]) -> LoglikReport:
    """Mean log-likelihood ratio of runs under m1 against sum_x E[N_T(x)] KL_x(m1 || m2)."""
    batch = simulate_batch(m1, PolicyAgent(policy), s0, T, seeds)
    values, violation = log_likelihood_arrays(batch.pairs, batch.states[:, 1:], batch.rewards, m1, m2)
    kl = kl_pairs(m1, m2)
    n_counts = expected_counts(m1, policy, s0, T)
    live = n_counts > 0
    expected = float(np.sum(n_counts[live] * kl[live]))
    mean = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(len(values)))
    return LoglikReport(mean, se, expected, abs(mean - expected) <= 3.0 * se, int(violation.sum()))
