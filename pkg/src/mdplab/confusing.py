"""Confusing and alternative models, local modifications and constructive certificates."""

from __future__ import annotations

import dataclasses
import itertools
import math
from collections.abc import Iterator

import numpy as np
from scipy import optimize

from . import tolerances
from .core import (OptimalSolution, PolicyEvaluation, enumerate_det_choices, optimal_gain_vector,
                   policy_eval, solve_optimal)
from .divergence import INF, kl_kernel, kl_pairs, kl_reward, weighted_sum
from .errors import InputError, PreconditionError
from .model import Mdp, Policy, RewardDist
from .tilting import class_reward_tilt, joint_tilt

FAMILIES = ("switch", "reward_only", "free")
ACTUALLY_OPTIMAL = "pi is actually optimal"
UNCONFUSING = "unconfusingly suboptimal"


def _same_dist(a: RewardDist, b: RewardDist, tol: float) -> bool:
    return a.kind == b.kind and abs(a.loc - b.loc) <= tol and abs(a.var - b.var) <= tol


def dominates(candidate: Mdp, base: Mdp) -> bool:
    """candidate >> base: every pair has finite KL(base || candidate)."""
    return bool(np.isfinite(kl_pairs(base, candidate)).all())


def _common_optimal_policy(base: Mdp, base_sol: OptimalSolution, candidate: Mdp) -> bool:
    tol = tolerances.current()
    cand_sol = solve_optimal(candidate)
    g_cand = cand_sol.gain_star
    # a closed structure of base-weakly-optimal pairs reaching the candidate's optimal gain
    wk = list(base_sol.weakly_optimal)
    sub = Mdp.from_arrays(candidate.states, [candidate.pairs[x] for x in wk],
                          candidate.P[wk], [candidate.rewards[x] for x in wk])
    if optimal_gain_vector(sub).max() >= g_cand - tol.gain:
        return True
    if base.n_deterministic_policies() > min(tol.enumeration_guard, 4096):
        return False
    for choice in enumerate_det_choices(base):
        pol = Policy.deterministic(base, choice)
        if (policy_eval(base, pol).gain.min() >= base_sol.gain_star - tol.gain
                and policy_eval(candidate, pol).gain.min() >= g_cand - tol.gain):
            return True
    return False


def is_alternative(base: Mdp, candidate: Mdp, solution: OptimalSolution | None = None) -> bool:
    if not base.same_layout(candidate):
        raise InputError("models have different pair spaces")
    if not dominates(candidate, base):
        return False
    sol = solve_optimal(base) if solution is None else solution
    return not _common_optimal_policy(base, sol, candidate)


def is_confusing(base: Mdp, candidate: Mdp, solution: OptimalSolution | None = None) -> bool:
    if not base.same_layout(candidate):
        raise InputError("models have different pair spaces")
    sol = solve_optimal(base) if solution is None else solution
    tol = tolerances.current().gain
    for x in sol.optimal_pairs:
        if np.abs(base.P[x] - candidate.P[x]).max() > tol:
            return False
        if not _same_dist(base.rewards[x], candidate.rewards[x], tol):
            return False
    return is_alternative(base, candidate, sol)


# ---------------------------------------------------------------------------
# local modifications

@dataclasses.dataclass(frozen=True)
class LocalModification:
    pair: int
    family: str
    kernel_row: np.ndarray
    reward: RewardDist
    kl_cost: float
    epsilon: float | None = None
    fallback: bool = False

    def apply(self, model: Mdp) -> Mdp:
        return model.with_pairs({self.pair: (self.kernel_row, self.reward)})

    def to_json(self, model: Mdp) -> dict:
        out = {"pair": model.actions[self.pair], "family": self.family,
               "kernel": {model.states[j]: float(p) for j, p in enumerate(self.kernel_row) if p > 0},
               "reward": self.reward.to_json(), "kl": self.kl_cost}
        if self.epsilon is not None:
            out["epsilon"] = self.epsilon
        if self.fallback:
            out["fallback"] = True
        return out


@dataclasses.dataclass(frozen=True)
class _Reference:
    """The optimal policy a modification is measured against."""

    policy: Policy
    evaluation: PolicyEvaluation

    def threshold(self, model: Mdp, state: int, zeta: float) -> float:
        ev = self.evaluation
        return float(ev.rewards[state] + ev.chain[state] @ ev.bias) + zeta


def _reference(model: Mdp, pi_star: Policy, solution: OptimalSolution) -> _Reference:
    ev = policy_eval(model, pi_star)
    if ev.gain.min() < solution.gain_star - 1e-9 * max(1.0, abs(solution.gain_star)):
        raise PreconditionError("reference policy is not gain-optimal")
    return _Reference(pi_star, ev)


def _reward_for_target(dist: RewardDist, target: float) -> RewardDist | None:
    """Cheapest same-family reward with mean >= target, None if out of range."""
    if dist.mean() >= target:
        return dist
    if dist.kind == "dirac":
        return None
    lo, hi = dist.mean_range()
    if target >= hi:
        return None
    return dist.with_mean(target)


def local_modification(model: Mdp, x, pi_star: Policy, family: str,
                       solution: OptimalSolution | None = None,
                       zeta: float | None = None) -> LocalModification | None:
    """KL-cheapest optimistic modification of pair ``x`` inside ``family``."""
    sol = solve_optimal(model) if solution is None else solution
    zeta = tolerances.current().zeta if zeta is None else zeta
    x = model.pair(x)
    if x in sol.optimal_pairs:
        raise PreconditionError("cannot modify an optimal pair")
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    ref = _reference(model, pi_star, sol)
    s = int(model.pair_state[x])
    b = ref.evaluation.bias
    thr = ref.threshold(model, s, zeta)
    p = model.P[x]
    dist = model.rewards[x]
    if dist.mean() + float(p @ b) >= thr:
        raise PreconditionError("cost 0 modification rejected: pair is already optimistic")

    if family == "reward_only":
        rho = _reward_for_target(dist, thr - float(p @ b))
        if rho is None:
            return None
        return LocalModification(x, family, p.copy(), rho, kl_reward(dist, rho))

    if family == "free":
        tilt = joint_tilt(dist, p, b, thr)
        if tilt is None:
            return None
        return LocalModification(x, family, tilt.kernel, tilt.reward, tilt.cost)

    target_row = model.P[pi_star.choices()[s]]

    def parts(eps):
        q = (1.0 - eps) * p + eps * target_row
        return q, _reward_for_target(dist, thr - float(q @ b))

    def cost(eps):
        q, rho = parts(eps)
        if rho is None:
            return INF
        return kl_kernel(p, q) + kl_reward(dist, rho)

    grid = np.linspace(0.0, 1.0, 65)
    values = np.array([cost(e) for e in grid])
    if not np.isfinite(values).any():
        return None
    # the cost is convex in eps; refine around the best grid point
    k = int(np.argmin(values))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    best_eps, best = float(grid[k]), float(values[k])
    if hi > lo:
        res = optimize.minimize_scalar(cost, bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-12})
        if res.fun < best:
            best_eps, best = float(res.x), float(res.fun)
    q, rho = parts(best_eps)
    return LocalModification(x, "switch", q, rho, best, epsilon=best_eps)


def fallback_modification(model: Mdp, x, pi_star: Policy, family: str,
                          solution: OptimalSolution | None = None) -> LocalModification:
    """The most optimistic element of the family when no optimistic one exists (flagged)."""
    sol = solve_optimal(model) if solution is None else solution
    x = model.pair(x)
    ref = _reference(model, pi_star, sol)
    b = ref.evaluation.bias
    dist = model.rewards[x]
    p = model.P[x]
    top = dist.mean_range()[1]
    rho = dist if dist.kind == "dirac" or math.isinf(top) else dist.with_mean(top)
    eps = None
    q = p.copy()
    if family == "switch":
        alt = model.P[pi_star.choices()[int(model.pair_state[x])]]
        eps = 1.0 if alt @ b > p @ b else 0.0
        q = (1.0 - eps) * p + eps * alt
    return LocalModification(x, family, q, rho, kl_kernel(p, q) + kl_reward(dist, rho),
                             epsilon=eps, fallback=True)


# ---------------------------------------------------------------------------
# Switch property

@dataclasses.dataclass(frozen=True)
class SwitchVerdict:
    status: str            # holds / fails / undetermined
    case: str
    predicted: str
    reason: str
    modification: LocalModification | None
    reference_policy: Policy | None


def _deviation_reference(model: Mdp, x: int, sol: OptimalSolution) -> tuple[Policy, Policy] | None:
    s = int(model.pair_state[x])
    policies = sol.optimal_det_policies or (sol.optimal_policy,)
    for pol in policies:
        choice = pol.choices()
        if choice[s] == x:
            continue
        dev = list(choice)
        dev[s] = x
        dev_pol = Policy.deterministic(model, dev)
        if policy_eval(model, dev_pol).gain.min() < sol.gain_star - 1e-9 * max(1.0, abs(sol.gain_star)):
            return pol, dev_pol
    return None


def switch_holds(model: Mdp, x, solution: OptimalSolution | None = None) -> SwitchVerdict:
    sol = solve_optimal(model) if solution is None else solution
    x = model.pair(x)
    found = _deviation_reference(model, x, sol)
    if found is None:
        raise PreconditionError("no optimal policy whose one-state deviation at the pair is suboptimal")
    pi_star, pi = found
    s = int(model.pair_state[x])
    ev_star = policy_eval(model, pi_star)
    ev = policy_eval(model, pi)
    rec_star = {t for c in ev_star.recurrent_classes for t in c}
    rec = {t for c in ev.recurrent_classes for t in c}
    if len(ev_star.recurrent_classes) == 1 and not ev_star.transient_states:
        case, predicted = "ergodic", "holds"
    elif len(ev_star.recurrent_classes) == 1:
        case, predicted = ("unichain-recurrent", "holds") if s in rec_star else ("unichain-transient", "fails")
    elif s not in rec_star:
        case, predicted = "multichain-transient", "fails"
    elif s in rec:
        case, predicted = "multichain-shared", "holds"
    else:
        case, predicted = "multichain-other", "undetermined"
    try:
        mod = local_modification(model, x, pi_star, "switch", sol)
    except PreconditionError as exc:
        return SwitchVerdict("undetermined", case, predicted, str(exc), None, pi_star)
    if mod is None:
        return SwitchVerdict("undetermined", case, predicted, "switch optimistic set is empty", None, pi_star)
    confusing = is_confusing(model, mod.apply(model), sol)
    status = "holds" if confusing else "fails"
    reason = "switched model is confusing" if confusing else "switched model is not confusing"
    return SwitchVerdict(status, case, predicted, reason, mod, pi_star)


# ---------------------------------------------------------------------------
# constructive certificates

@dataclasses.dataclass(frozen=True)
class ConfusingCertificate:
    base: Mdp
    model: Mdp
    policy: Policy
    reference_policy: Policy
    modifications: tuple[LocalModification, ...]
    kl: np.ndarray                 # KL_x(base, model) on every pair
    info_bound: float              # sum over modified pairs of kappa(x) KL_x
    policy_gain: float             # best recurrent-class gain of the policy in the modified model
    gain_star: float
    confusing: bool

    @property
    def modified_pairs(self) -> tuple[int, ...]:
        return tuple(sorted(m.pair for m in self.modifications))

    def info(self, mu) -> float:
        return weighted_sum(mu, self.kl)

    def to_json(self) -> dict:
        return {
            "policy": self.policy.to_json(self.base),
            "reference_policy": self.reference_policy.to_json(self.base),
            "modifications": [m.to_json(self.base) for m in self.modifications],
            "info_bound": self.info_bound,
            "gain_check": {"policy_gain": self.policy_gain, "gain_star": self.gain_star,
                           "beneficial": self.policy_gain > self.gain_star},
            "confusing": self.confusing,
        }


@dataclasses.dataclass(frozen=True)
class NoCertificate:
    reason: str

    def __bool__(self):
        return False


def best_class_gain(model: Mdp, policy: Policy) -> float:
    return max(policy_eval(model, policy).class_gains())


def _recurrent_states(ev: PolicyEvaluation) -> set[int]:
    return {s for c in ev.recurrent_classes for s in c}


def _pick_reference(model: Mdp, pi: Policy, sol: OptimalSolution) -> tuple[Policy, set[int]]:
    """Optimal deterministic policy that differs from pi on the fewest recurrent states of pi."""
    rec = _recurrent_states(policy_eval(model, pi))
    choice = pi.choices()
    best = None
    for pol in sol.optimal_det_policies or (sol.optimal_policy,):
        diff = {s for s, (a, b) in enumerate(zip(choice, pol.choices())) if a != b}
        key = (len(diff & rec), len(diff))
        if best is None or key < best[0]:
            best = (key, pol, diff)
    return best[1], best[2]


def build_confusing(model: Mdp, pi: Policy, kappa, solution: OptimalSolution | None = None,
                    kernel_fixed: bool = False) -> ConfusingCertificate | NoCertificate:
    """Greedy construction of a confusing model under which ``pi`` beats g*.

    ``kernel_fixed`` restricts every modification to rewards.
    """
    if not pi.is_deterministic():
        raise PreconditionError("policy must be deterministic")
    sol = solve_optimal(model) if solution is None else solution
    tol = tolerances.current()
    kappa = np.asarray(kappa, dtype=float)
    pi_star, differ = _pick_reference(model, pi, sol)
    ev_pi = policy_eval(model, pi)
    rec_pi = _recurrent_states(ev_pi)
    rec_star = _recurrent_states(policy_eval(model, pi_star))
    if not differ & rec_pi:
        return NoCertificate(ACTUALLY_OPTIMAL)
    g_star = sol.gain_star
    opt = set(sol.optimal_pairs)
    choice = pi.choices()

    candidates: dict[int, LocalModification] = {}
    for s in sorted(rec_pi):
        x = choice[s]
        if x in opt:
            continue
        family = "switch" if (s in differ and s in rec_star and not kernel_fixed) else "reward_only"
        try:
            mod = local_modification(model, x, pi_star, family, sol)
        except PreconditionError:
            continue
        if mod is None:
            mod = fallback_modification(model, x, pi_star, family, sol)
        if not math.isfinite(mod.kl_cost):
            continue
        candidates[x] = mod

    def weighted(mod):
        return 0.0 if kappa[mod.pair] == 0 else kappa[mod.pair] * mod.kl_cost

    current = model
    chosen: list[LocalModification] = []
    remaining = sorted(candidates)
    while remaining:
        trials = {x: candidates[x].apply(current) for x in remaining}
        finishers = [x for x in remaining if best_class_gain(trials[x], pi) > g_star + tol.gain]
        pool = finishers or remaining
        x = min(pool, key=lambda y: (weighted(candidates[y]), y))
        chosen.append(candidates[x])
        current = trials[x]
        remaining.remove(x)
        gain = best_class_gain(current, pi)
        if gain > g_star + tol.gain:
            kl = kl_pairs(model, current)
            return ConfusingCertificate(
                base=model, model=current, policy=pi, reference_policy=pi_star,
                modifications=tuple(sorted(chosen, key=lambda m: m.pair)), kl=kl,
                info_bound=weighted_sum(kappa, kl), policy_gain=gain, gain_star=g_star,
                confusing=is_confusing(model, current, sol))
    return NoCertificate(UNCONFUSING)


# ---------------------------------------------------------------------------
# unlikelihood of optimality

@dataclasses.dataclass(frozen=True)
class Unlikelihood:
    value: float
    class_index: int | None
    coefficients: dict[int, float]    # KL per pair of the minimising candidate
    rewards: dict[int, RewardDist]


def unlikelihood_detail(model: Mdp, pi: Policy, mu, solution: OptimalSolution | None = None,
                        evaluation: PolicyEvaluation | None = None) -> Unlikelihood:
    """Exact value over reward-only candidates, one class of pi at a time."""
    sol = solve_optimal(model) if solution is None else solution
    ev = policy_eval(model, pi) if evaluation is None else evaluation
    mu = np.asarray(mu, dtype=float)
    free = ~sol.optimal_mask()
    best = Unlikelihood(INF, None, {}, {})
    eligible = False
    for k in range(len(ev.recurrent_classes)):
        pairs = ev.class_pairs(k)
        if not free[pairs].any():
            continue
        eligible = True
        res = class_reward_tilt(pairs, model.rewards, ev.class_stationary[k], mu, free, sol.gain_star)
        if res.cost < best.value:
            best = Unlikelihood(res.cost, k, res.coefficients, res.rewards)
    if not eligible:
        raise PreconditionError("policy is optimal: every recurrent class lies in the optimal pairs")
    return best


def unlikelihood(model: Mdp, pi: Policy, mu, mode: str = "exact_fixed_kernel",
                 solution: OptimalSolution | None = None) -> float:
    if mode == "exact_fixed_kernel":
        return unlikelihood_detail(model, pi, mu, solution).value
    if mode == "upper_bound":
        cert = build_confusing(model, pi, mu, solution)
        return cert.info(mu) if cert else INF
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# neighbourhoods

def neighborhood(pi: Policy, k: int, model: Mdp) -> Iterator[Policy]:
    """Deterministic policies differing from ``pi`` in at most ``k`` states (pi first)."""
    if not pi.is_deterministic():
        raise PreconditionError("policy must be deterministic")
    guard = tolerances.current().enumeration_guard
    base = pi.choices()
    count = 0
    for size in range(0, min(k, model.n_states) + 1):
        for states in itertools.combinations(range(model.n_states), size):
            options = [[y for y in model.state_pairs[s] if y != base[s]] for s in states]
            for combo in itertools.product(*options):
                count += 1
                if count > guard:
                    raise PreconditionError("instance too large for enumeration")
                choice = list(base)
                for s, y in zip(states, combo):
                    choice[s] = y
                yield Policy.deterministic(model, choice)


def local_improvement_order(model: Mdp) -> int:
    """Smallest k such that every suboptimal policy improves strictly within distance k."""
    tol = 1e-10
    gains = {c: policy_eval(model, Policy.deterministic(model, c)).gain
             for c in enumerate_det_choices(model)}
    best = max(g.min() for g in gains.values())
    suboptimal = [c for c, g in gains.items() if g.min() < best - 1e-9 * max(1.0, abs(best))]

    def improves(new, old):
        return bool((new >= old - tol).all() and (new > old + tol).any())

    for k in range(1, model.n_states + 1):
        ok = True
        for c in suboptimal:
            g = gains[c]
            if not any(improves(gains[tuple(p.choices())], g)
                       for p in neighborhood(Policy.deterministic(model, c), k, model)):
                ok = False
                break
        if ok:
            return k
    return model.n_states
