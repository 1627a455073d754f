"""Kullback-Leibler divergences (natural log) and trajectory log-likelihood ratios."""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .errors import InputError
from .model import Mdp, RewardDist

INF = math.inf


def kl_bernoulli(p: float, q: float) -> float:
    """kl(p, q) with kl(0,0) = kl(1,1) = 0 and +inf off the support."""
    if p == q:
        return 0.0
    if q <= 0.0 or q >= 1.0:
        return INF
    out = 0.0
    if p > 0.0:
        out += p * math.log(p / q)
    if p < 1.0:
        out += (1.0 - p) * math.log((1.0 - p) / (1.0 - q))
    return max(out, 0.0)


def kl_gaussian(m1: float, v1: float, m2: float, v2: float) -> float:
    if v1 == v2:
        return (m1 - m2) ** 2 / (2.0 * v1)
    return 0.5 * (math.log(v2 / v1) + (v1 + (m1 - m2) ** 2) / v2 - 1.0)


def _as_bernoulli(d: RewardDist) -> RewardDist | None:
    """A Dirac atom at 0 or 1 is the Bernoulli distribution with that mean."""
    if d.kind == "bernoulli":
        return d
    if d.kind == "dirac" and d.loc in (0.0, 1.0):
        return RewardDist.bernoulli(d.loc)
    return None


def kl_reward(a: RewardDist, b: RewardDist) -> float:
    if a.kind == b.kind == "gaussian":
        return kl_gaussian(a.loc, a.var, b.loc, b.var)
    if a.kind == b.kind == "dirac":
        return 0.0 if a.loc == b.loc else INF
    if "bernoulli" in (a.kind, b.kind):
        ba, bb = _as_bernoulli(a), _as_bernoulli(b)
        if ba is not None and bb is not None:
            return kl_bernoulli(ba.loc, bb.loc)
    return INF


def kl_kernel(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise InputError("kernel rows over different state spaces")
    on = p > 0
    if (q[on] <= 0).any():
        return INF
    return max(float(np.sum(p[on] * np.log(p[on] / q[on]))), 0.0)


def kl_pair(m1: Mdp, m2: Mdp, x) -> float:
    if not m1.same_layout(m2):
        raise InputError("models have different pair spaces")
    x = m1.pair(x)
    k = kl_kernel(m1.P[x], m2.P[x])
    return INF if k == INF else k + kl_reward(m1.rewards[x], m2.rewards[x])


def kl_pairs(m1: Mdp, m2: Mdp) -> np.ndarray:
    """Vector of KL_x(m1 || m2) over all pairs."""
    if not m1.same_layout(m2):
        raise InputError("models have different pair spaces")
    return np.array([kl_pair(m1, m2, x) for x in range(m1.n_pairs)])


def weighted_sum(mu, costs) -> float:
    """sum mu(x) c(x) with 0 * inf = 0 (in either factor)."""
    mu = np.asarray(mu, dtype=float)
    costs = np.asarray(costs, dtype=float)
    live = (mu != 0) & (costs != 0)
    if not live.any():
        return 0.0
    return float(np.sum(mu[live] * costs[live]))


def info_value(mu, m1: Mdp, m2: Mdp) -> float:
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (m1.n_pairs,):
        raise InputError("measure has the wrong length")
    return weighted_sum(mu, kl_pairs(m1, m2))


# ---------------------------------------------------------------------------
# trajectories

@dataclasses.dataclass(frozen=True)
class LogLikelihood:
    value: float
    support_violation: bool


def _pair_loglik(model: Mdp, pairs: np.ndarray, next_states: np.ndarray, rewards: np.ndarray) -> np.ndarray:
    """Per-step log-likelihood of transitions and rewards; last axis is time."""
    with np.errstate(divide="ignore"):
        out = np.log(model.P[pairs, next_states])
    for x in np.unique(pairs):
        sel = pairs == x
        out[sel] += model.rewards[x].logpdf(rewards[sel])
    return out


def log_likelihood_arrays(pairs, next_states, rewards, m1: Mdp, m2: Mdp) -> tuple[np.ndarray, np.ndarray]:
    """Log-likelihood ratio summed over the last axis, and a support-violation flag."""
    if not m1.same_layout(m2):
        raise InputError("models have different pair spaces")
    pairs = np.asarray(pairs)
    next_states = np.asarray(next_states)
    rewards = np.asarray(rewards, dtype=float)
    l1 = _pair_loglik(m1, pairs, next_states, rewards)
    l2 = _pair_loglik(m2, pairs, next_states, rewards)
    violation = np.isneginf(l2) & np.isfinite(l1)
    with np.errstate(invalid="ignore"):
        step = np.where(violation, INF, l1 - l2)
    # steps that are impossible under both models carry no information
    step = np.where(np.isneginf(l1) & np.isneginf(l2), 0.0, step)
    return step.sum(axis=-1), violation.any(axis=-1)


def log_likelihood_ratio(traj, m1: Mdp, m2: Mdp) -> LogLikelihood:
    value, flag = log_likelihood_arrays(traj.pairs, traj.states[1:], traj.rewards, m1, m2)
    return LogLikelihood(float(value), bool(flag))
