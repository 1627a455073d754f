"""Lagrangian solvers for the information-cost minimisations.

All of them minimise KL(original || modified), i.e. the modified model sits in
the second argument.  For a multiplier ``lam`` the per-pair subproblems are

* Bernoulli  : argmin_a  kl(r, a) - lam * a
* Gaussian   : argmin_m  (m - m0)^2 / (2 var) - lam * m     ->  m0 + lam * var
* kernel row : argmin_q  KL(p || q) - lam * q.h

and the multiplier is found by bisection on the linear constraint.
"""

from __future__ import annotations

import dataclasses
import math
from collections.abc import Callable, Sequence

import numpy as np
from scipy import optimize

from .divergence import INF, kl_kernel, kl_reward
from .model import RewardDist

LAMBDA_CAP = 1e15


def bernoulli_tilt(r: float, t: float) -> float:
    """Root in [r, 1] of t a (1 - a) = a - r, the maximiser of t a - kl(r, a)."""
    if t <= 0.0:
        return r
    if t == math.inf:
        return 1.0
    disc = math.sqrt((1.0 - t) ** 2 + 4.0 * t * r)
    if t > 1.0:
        a = ((t - 1.0) + disc) / (2.0 * t)
    else:
        a = 2.0 * r / ((1.0 - t) + disc) if r > 0 else 0.0
    return min(max(a, r), 1.0)


def reward_tilt(dist: RewardDist, t: float) -> RewardDist:
    if dist.kind == "bernoulli":
        return RewardDist.bernoulli(bernoulli_tilt(dist.loc, t))
    if dist.kind == "gaussian":
        return RewardDist.gaussian(dist.loc + t * dist.var, dist.var)
    return dist


def kernel_tilt(p: np.ndarray, h: np.ndarray, lam: float) -> np.ndarray:
    """argmin_q KL(p || q) - lam q.h over the simplex (q may add support)."""
    p = np.asarray(p, dtype=float)
    h = np.asarray(h, dtype=float)
    if lam <= 0.0:
        return p.copy()
    on = p > 0
    h_on = h[on].max()
    # eta is written as lam*h_on + e; with d = lam*(h_on - h) >= 0 the mass
    # sum p/(e + d) is decreasing in e and crosses 1 inside [P0, 1]
    d = lam * (h_on - h[on])
    top_mass = float(p[on][d == 0].sum())

    def mass(e):
        return float(np.sum(p[on] / (e + d)))

    q = np.zeros_like(p)
    floor = lam * (h.max() - h_on)
    if floor > 0 and mass(floor) <= 1.0:
        # the cheapest way up puts the leftover mass on the best state outside the support
        q[on] = p[on] / (floor + d)
        top = int(np.flatnonzero((h == h.max()) & ~on)[0])
        q[top] += max(0.0, 1.0 - q.sum())
        return q
    lo = max(top_mass, floor)
    e = lo if mass(lo) <= 1.0 else optimize.brentq(lambda v: mass(v) - 1.0, lo, 1.0, xtol=1e-300)
    q[on] = p[on] / (e + d)
    q /= q.sum()
    return q


def _bisect(F: Callable[[float], float], target: float) -> float | None:
    """Smallest multiplier (to relative accuracy) with F(lam) >= target, None if none.

    F is nondecreasing; the bracket is found geometrically so tiny and huge
    multipliers are resolved equally well.
    """
    if F(0.0) >= target:
        return 0.0
    hi = 1.0
    if F(hi) >= target:
        lo = 0.5
        while F(lo) >= target:
            hi, lo = lo, lo / 2.0
            if lo < 1e-300:
                return hi
    else:
        lo = hi
        while F(hi) < target:
            lo, hi = hi, hi * 2.0
            if hi > LAMBDA_CAP:
                return None
    for _ in range(200):
        if hi - lo <= 4e-16 * hi:
            break
        mid = 0.5 * (lo + hi)
        if F(mid) >= target:
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# single pair, reward and kernel free

@dataclasses.dataclass(frozen=True)
class JointTilt:
    reward: RewardDist
    kernel: np.ndarray
    cost: float
    multiplier: float


def joint_tilt(dist: RewardDist, p: np.ndarray, h: np.ndarray, threshold: float) -> JointTilt | None:
    """Cheapest (reward, kernel) with mean + q.h >= threshold; None when out of reach."""
    p = np.asarray(p, dtype=float)
    h = np.asarray(h, dtype=float)
    lo_mean, hi_mean = dist.mean_range()
    if hi_mean + h.max() <= threshold:
        return None

    def parts(lam):
        rho = reward_tilt(dist, lam)
        return rho, kernel_tilt(p, h, lam)

    def F(lam):
        rho, q = parts(lam)
        return rho.mean() + float(q @ h)

    lam = _bisect(F, threshold)
    if lam is None:
        return None
    rho, q = parts(lam)
    cost = kl_reward(dist, rho) + kl_kernel(p, q)
    if not math.isfinite(cost):
        return None
    return JointTilt(rho, q, cost, lam)


# ---------------------------------------------------------------------------
# one recurrent class, kernels fixed

@dataclasses.dataclass(frozen=True)
class ClassTilt:
    cost: float                      # inf when the target is out of reach
    rewards: dict[int, RewardDist]   # modified rewards of free pairs
    coefficients: dict[int, float]   # kl(original, modified) per free pair
    multiplier: float | None


def class_reward_tilt(pairs: Sequence[int], rewards: Sequence[RewardDist], nu: np.ndarray,
                      weights: np.ndarray, free: np.ndarray, target: float) -> ClassTilt:
    """inf sum_x w(x) kl(r_x, a_x) subject to sum_x nu(x) mean(a_x) >= target.

    Only ``free`` pairs may move; a free pair with zero weight moves to the top
    of its range at no cost.
    """
    fixed_part = sum(nu[x] * rewards[x].mean() for x in pairs if not free[x])
    movable = [x for x in pairs if free[x] and nu[x] > 0 and rewards[x].kind != "dirac"]
    stuck = sum(nu[x] * rewards[x].mean() for x in pairs if free[x] and x not in movable)
    base = fixed_part + stuck
    zero_w = [x for x in movable if weights[x] <= 0]
    paid = [x for x in movable if weights[x] > 0]
    top = base + sum(nu[x] * rewards[x].mean_range()[1] for x in movable)
    free_top = {x: rewards[x].mean_range()[1] for x in zero_w}
    if any(math.isinf(v) for v in free_top.values()):
        return ClassTilt(0.0, {}, {}, 0.0)
    if top <= target:
        return ClassTilt(INF, {}, {}, None)
    boost = sum(nu[x] * free_top[x] for x in zero_w)

    def means(lam):
        return {x: reward_tilt(rewards[x], lam * nu[x] / weights[x]) for x in paid}

    def F(lam):
        return base + boost + sum(nu[x] * d.mean() for x, d in means(lam).items())

    lam = _bisect(F, target)
    if lam is None:
        return ClassTilt(INF, {}, {}, None)
    new = means(lam)
    new.update({x: rewards[x].with_mean(free_top[x]) for x in zero_w})
    coeffs = {x: kl_reward(rewards[x], new[x]) for x in new}
    cost = sum(weights[x] * coeffs[x] for x in paid)
    return ClassTilt(cost, new, coeffs, lam)
