"""Regret lower bound K(M): cutting-plane solver and closed forms."""

from __future__ import annotations

import dataclasses
import math
from collections.abc import Callable, Sequence

import numpy as np

from . import tolerances
from .confusing import build_confusing, is_confusing, local_modification, neighborhood
from .core import (OptimalSolution, enumerate_det_choices, policy_eval, solve_optimal)
from .divergence import INF, kl_bernoulli, kl_pairs
from .errors import LPError, LPInfeasible, PreconditionError
from .lp import solve_lp
from .model import Mdp, Policy
from .structure import contract, invariant_system, is_invariant, represent_contracted
from .tilting import class_reward_tilt, joint_tilt

CLASSES = ("fixed_kernel_rewards", "constructive")
FLOOR = 1e-6


@dataclasses.dataclass
class LowerBoundReport:
    model: Mdp
    value: float
    mu: np.ndarray
    method: str
    active_policies: list[dict] = dataclasses.field(default_factory=list)
    converged: bool = True
    rounds: int = 0
    history: list[float] = dataclasses.field(default_factory=list)   # LP value per round
    residual: float = 0.0       # max violation of the invariance equalities
    min_constraint: float = INF  # smallest constraint value at mu (>= 1 - 1e-6 when converged)
    restricted: bool = False
    extra: dict = dataclasses.field(default_factory=dict)

    def mu_by_action(self) -> dict[str, float]:
        return {a: float(v) for a, v in zip(self.model.actions, self.mu)}

    def to_json(self) -> dict:
        out = {
            "value": self.value,
            "mu": self.mu_by_action(),
            "method": self.method + (" (restricted)" if self.restricted else ""),
            "active_policies": self.active_policies,
            "converged": self.converged,
            "rounds": self.rounds,
        }
        if self.extra:
            out["extra"] = self.extra
        return out


# ---------------------------------------------------------------------------
# cutting planes

@dataclasses.dataclass
class _Constraint:
    key: tuple
    value: float              # constraint function at the evaluation point
    coefficients: np.ndarray  # a linear minorant through the evaluation point
    payload: dict
    policies: list[Policy]


def _floored(mu: np.ndarray) -> np.ndarray:
    return np.maximum(mu, FLOOR * max(1.0, float(mu.max(initial=0.0))))


def _cutting_plane(model: Mdp, objective: np.ndarray, A_eq: np.ndarray | None,
                   evaluate: Callable[[np.ndarray], list[_Constraint]],
                   initial: Sequence[_Constraint], rhs: float, columns: np.ndarray):
    """Minimise objective.mu over mu >= 0, A_eq mu = 0 and the generated cuts.

    ``columns`` selects the pairs carrying a variable; the others stay at 0.
    """
    tol = tolerances.current()
    cuts: list[_Constraint] = []
    seen: set = set()

    def add(c: _Constraint) -> bool:
        sig = (c.key, tuple(np.round(c.coefficients, 12)))
        if sig in seen:
            return False
        seen.add(sig)
        cuts.append(c)
        return True

    for c in initial:
        add(c)
    history: list[float] = []
    n = model.n_pairs
    mu = np.zeros(n)
    last: list[_Constraint] = []
    for rounds in range(1, tol.max_rounds + 1):
        if cuts:
            A_ub = -np.array([c.coefficients[columns] for c in cuts])
            b_ub = -np.full(len(cuts), rhs)
            eq = None if A_eq is None else A_eq[:, columns]
            try:
                res = solve_lp(objective[columns], A_ub, b_ub, eq,
                               None if eq is None else np.zeros(eq.shape[0]))
            except LPInfeasible:
                return None, cuts, rounds, True, history, []
            except LPError as exc:
                raise LPError(f"{exc} in round {rounds}; LP values so far {history}") from exc
            mu = np.zeros(n)
            mu[columns] = res.x
            history.append(res.value)
        else:
            history.append(0.0)
        last = evaluate(mu)
        violated = [c for c in last if c.value < rhs * (1.0 - tol.cut_convergence)]
        if not violated:
            return mu, cuts, rounds, True, history, last
        added = False
        for c in sorted(violated, key=lambda c: c.key):
            added |= add(c)
        if not added:
            return mu, cuts, rounds, False, history, last
    return mu, cuts, tol.max_rounds, False, history, last


def _candidate_policies(model: Mdp, sol: OptimalSolution, k: int | None) -> list[tuple[Policy, object]]:
    """Suboptimal deterministic policies with their evaluations (all, or within V_opt(k))."""
    g = sol.gain_star
    slack = 1e-9 * max(1.0, abs(g))
    if k is None:
        pols = (Policy.deterministic(model, c) for c in enumerate_det_choices(model))
    else:
        seen, pols = set(), []
        for opt in sol.optimal_det_policies or (sol.optimal_policy,):
            for p in neighborhood(opt, k, model):
                if tuple(p.choices()) not in seen:
                    seen.add(tuple(p.choices()))
                    pols.append(p)
    out = []
    for p in pols:
        ev = policy_eval(model, p)
        if ev.gain.min() < g - slack:
            out.append((p, ev))
    return out


def _active(model: Mdp, cuts: list[_Constraint], mu: np.ndarray, rhs: float) -> list[dict]:
    out = []
    for c in cuts:
        slack = float(c.coefficients @ mu) - rhs
        if abs(slack) <= 1e-8 * max(1.0, rhs):
            out.append({"policies": [p.to_json(model) for p in c.policies], "certificate": c.payload})
    return out


def _finish(model, sol, method, outcome, rhs, A_eq, restricted, extra=None) -> LowerBoundReport:
    mu, cuts, rounds, converged, history, last = outcome
    gaps = _clean_gaps(sol)
    if mu is None:
        return LowerBoundReport(model, INF, np.full(model.n_pairs, INF), method, [], True, rounds,
                                history, 0.0, INF, restricted, extra or {})
    residual = 0.0 if A_eq is None else float(np.abs(A_eq @ mu).max(initial=0.0))
    return LowerBoundReport(
        model=model, value=float(gaps @ mu), mu=mu, method=method,
        active_policies=_active(model, cuts, mu, rhs), converged=converged, rounds=rounds,
        history=history, residual=residual,
        min_constraint=min((c.value for c in last), default=INF),
        restricted=restricted, extra=extra or {})


def _clean_gaps(sol: OptimalSolution) -> np.ndarray:
    gaps = np.clip(sol.gaps, 0.0, None).copy()
    gaps[list(sol.weakly_optimal)] = 0.0
    return gaps


def _navigation(model: Mdp, sol: OptimalSolution, navigation: str) -> np.ndarray:
    if navigation == "full":
        return invariant_system(model).matrix
    if navigation == "minor":
        return invariant_system(contract(model, sol.optimal_pairs)).matrix
    raise ValueError(f"unknown navigation constraint {navigation!r}")


# ---------------------------------------------------------------------------
# general solver

def _class_key(model: Mdp, pairs) -> tuple:
    return tuple(int(x) for x in pairs)


def _fixed_kernel_constraints(model: Mdp, sol: OptimalSolution, policies, free: np.ndarray):
    """Distinct recurrent classes that some reward change can push above g*."""
    classes: dict[tuple, dict] = {}
    for pol, ev in policies:
        for k in range(len(ev.recurrent_classes)):
            pairs = ev.class_pairs(k)
            if not free[pairs].any():
                continue
            key = _class_key(model, pairs)
            entry = classes.setdefault(key, {"pairs": pairs, "nu": ev.class_stationary[k], "policies": []})
            entry["policies"].append(pol)
    # classes that no reward change can lift are not constraints
    probe = np.ones(model.n_pairs)
    return {key: e for key, e in classes.items()
            if math.isfinite(class_reward_tilt(e["pairs"], model.rewards, e["nu"], probe, free,
                                               sol.gain_star).cost)}


def _fixed_kernel_evaluator(model: Mdp, sol: OptimalSolution, classes: dict, free: np.ndarray):
    def evaluate(mu):
        weights = _floored(mu)
        out = []
        for key, e in classes.items():
            res = class_reward_tilt(e["pairs"], model.rewards, e["nu"], weights, free, sol.gain_star)
            coeffs = np.zeros(model.n_pairs)
            for x, v in res.coefficients.items():
                coeffs[x] = v
            payload = {"class": [model.actions[x] for x in e["pairs"]],
                       "rewards": {model.actions[x]: d.to_json() for x, d in sorted(res.rewards.items())},
                       "kl": {model.actions[x]: v for x, v in sorted(res.coefficients.items())}}
            out.append(_Constraint(key, float(res.cost), coeffs, payload, e["policies"]))
        return out
    return evaluate


def _free_certificates(model: Mdp, sol: OptimalSolution) -> list[_Constraint]:
    out = []
    ref = sol.optimal_policy
    for x in range(model.n_pairs):
        if x in sol.optimal_pairs:
            continue
        try:
            mod = local_modification(model, x, ref, "free", sol)
        except PreconditionError:
            continue
        if mod is None or not math.isfinite(mod.kl_cost):
            continue
        candidate = mod.apply(model)
        if not is_confusing(model, candidate, sol):
            continue
        kl = kl_pairs(model, candidate)
        out.append(_Constraint(("free", x), float(mod.kl_cost), kl,
                               {"modifications": [mod.to_json(model)]}, []))
    return out


def _constructive_evaluator(model: Mdp, sol: OptimalSolution, policies, free_cuts):
    def evaluate(mu):
        out = []
        for c in free_cuts:
            out.append(dataclasses.replace(c, value=float(c.coefficients @ mu)))
        for pol, _ in policies:
            cert = build_confusing(model, pol, mu, sol)
            if not cert or not cert.confusing:
                continue
            key = ("policy",) + tuple(pol.choices())
            out.append(_Constraint(key, cert.info(mu), np.nan_to_num(cert.kl, posinf=0.0),
                                   cert.to_json(), [pol]))
        return out
    return evaluate


def lower_bound_general(model: Mdp, model_class: str = "fixed_kernel_rewards", *,
                        neighborhood_k: int | None = None, navigation: str = "full",
                        rhs: float = 1.0, solution: OptimalSolution | None = None) -> LowerBoundReport:
    """K(M) by constraint generation over suboptimal deterministic policies.

    ``navigation`` is ``"full"`` (invariant measures of the model) or
    ``"minor"`` (invariant measures of the model contracted by X_opt).
    """
    if model_class not in CLASSES:
        raise ValueError(f"unknown model class {model_class!r}")
    sol = solve_optimal(model) if solution is None else solution
    A_eq = _navigation(model, sol, navigation)
    policies = _candidate_policies(model, sol, neighborhood_k)
    free = ~sol.optimal_mask()
    columns = np.arange(model.n_pairs)
    gaps = _clean_gaps(sol)
    restricted = neighborhood_k is not None
    if model_class == "fixed_kernel_rewards":
        classes = _fixed_kernel_constraints(model, sol, policies, free)
        if not classes:
            return LowerBoundReport(model, 0.0, np.zeros(model.n_pairs), "general/fixed_kernel_rewards",
                                    restricted=restricted)
        evaluate = _fixed_kernel_evaluator(model, sol, classes, free)
        outcome = _cutting_plane(model, gaps, A_eq, evaluate, [], rhs, columns)
        return _finish(model, sol, "general/fixed_kernel_rewards", outcome, rhs, A_eq, restricted)
    free_cuts = _free_certificates(model, sol)
    evaluate = _constructive_evaluator(model, sol, policies, free_cuts)
    if not free_cuts and not evaluate(np.zeros(model.n_pairs)):
        return LowerBoundReport(model, 0.0, np.zeros(model.n_pairs), "general/constructive",
                                restricted=restricted)
    outcome = _cutting_plane(model, gaps, A_eq, evaluate, free_cuts, rhs, columns)
    extra = {}
    if _optimally_recurrent(model, sol):
        extra["recurrent_closed_form"] = recurrent_closed_form(model, sol).value
    return _finish(model, sol, "general/constructive", outcome, rhs, A_eq, restricted, extra)


# ---------------------------------------------------------------------------
# closed forms

def _single_report(model, sol, mu, method) -> LowerBoundReport:
    gaps = _clean_gaps(sol)
    return LowerBoundReport(model, float(np.sum(gaps[mu > 0] * mu[mu > 0])), mu, method)


def bandit_closed_form(model: Mdp, solution: OptimalSolution | None = None) -> LowerBoundReport:
    if model.n_states != 1:
        raise PreconditionError("bandit closed form needs a single-state model")
    if any(d.kind != "bernoulli" for d in model.rewards):
        raise PreconditionError("bandit closed form needs Bernoulli rewards")
    sol = solve_optimal(model) if solution is None else solution
    means = model.r
    best = float(means.max())
    if best >= 1.0:
        raise PreconditionError("interior condition violated: the best arm has mean 1")
    mu = np.array([0.0 if m >= best else 1.0 / kl_bernoulli(m, best) for m in means])
    return _single_report(model, sol, mu, "bandit_closed_form")


def _optimally_recurrent(model: Mdp, sol: OptimalSolution) -> bool:
    return len(model.states_of_pairs(sol.optimal_pairs)) == model.n_states


def c_value(model: Mdp, x, solution: OptimalSolution | None = None) -> float:
    """Cheapest joint reward and kernel change making ``x`` optimistic for h* (closure value)."""
    sol = solve_optimal(model) if solution is None else solution
    x = model.pair(x)
    s = int(model.pair_state[x])
    h = sol.bias_star
    thr = sol.gain_star + float(h[s])
    dist = model.rewards[x]
    if dist.mean() + float(model.P[x] @ h) >= thr:
        return 0.0
    tilt = joint_tilt(dist, model.P[x], h, thr)
    return INF if tilt is None else tilt.cost


def recurrent_closed_form(model: Mdp, solution: OptimalSolution | None = None) -> LowerBoundReport:
    sol = solve_optimal(model) if solution is None else solution
    if not _optimally_recurrent(model, sol):
        raise PreconditionError("not optimally recurrent: use lower_bound_general")
    gaps = _clean_gaps(sol)
    mu = np.zeros(model.n_pairs)
    for x in np.flatnonzero(gaps > 0):
        c = c_value(model, int(x), sol)
        mu[x] = 0.0 if math.isinf(c) else 1.0 / c
    minor = contract(model, sol.optimal_pairs)
    if is_invariant(mu, invariant_system(minor)):
        mu = represent_contracted(model, mu, sol)
        value = float(np.sum(gaps[gaps > 0] * mu[gaps > 0]))
    else:
        # X_opt splits into several pieces: balance the flow between them at least cost
        pos = gaps > 0
        A = invariant_system(model).matrix
        lower = mu.copy()
        res = solve_lp(gaps, A_ub=-np.eye(model.n_pairs)[pos], b_ub=-lower[pos],
                       A_eq=A, b_eq=np.zeros(A.shape[0]))
        mu, value = res.x, res.value
    return LowerBoundReport(model, value, mu, "recurrent_closed_form")


def _switching_shape(model: Mdp) -> np.ndarray:
    n = model.n_states
    if model.n_pairs != n * n:
        raise PreconditionError("shape mismatch: expected one action per (state, state) pair")
    diag = np.zeros(n, dtype=int)
    switch_cost = None
    for s in range(n):
        block = model.state_pairs[s]
        if len(block) != n:
            raise PreconditionError("shape mismatch: every state needs one action per target")
        targets = set()
        for x in block:
            t = np.flatnonzero(model.P[x] > 0)
            if len(t) != 1:
                raise PreconditionError("shape mismatch: transitions must be deterministic")
            t = int(t[0])
            targets.add(t)
            d = model.rewards[x]
            if t == s:
                if d.kind != "bernoulli":
                    raise PreconditionError("shape mismatch: self-loops carry Bernoulli arm rewards")
                diag[s] = x
            else:
                if d.kind != "dirac" or d.loc > 0:
                    raise PreconditionError("shape mismatch: switches carry a deterministic cost")
                if switch_cost is not None and d.loc != switch_cost:
                    raise PreconditionError("shape mismatch: switch costs differ")
                switch_cost = d.loc
        if len(targets) != n:
            raise PreconditionError("shape mismatch: targets must cover every state")
    return diag


def switching_bandit_bound(model: Mdp, solution: OptimalSolution | None = None) -> LowerBoundReport:
    diag = _switching_shape(model)
    sol = solve_optimal(model) if solution is None else solution
    means = model.r[diag]
    best = float(means.max())
    if best >= 1.0:
        raise PreconditionError("interior condition violated: the best arm has mean 1")
    mu = np.zeros(model.n_pairs)
    for x, m in zip(diag, means):
        if m < best:
            mu[x] = 1.0 / kl_bernoulli(m, best)
    return _single_report(model, sol, mu, "switching_bandit")


def no_navigation_bound(model: Mdp, solution: OptimalSolution | None = None,
                        rhs: float = 1.0) -> LowerBoundReport:
    """Fixed-kernel bound without flow constraints; zero-gap pairs carry infinite weight."""
    sol = solve_optimal(model) if solution is None else solution
    gaps = _clean_gaps(sol)
    positive = gaps > 0
    policies = _candidate_policies(model, sol, None)
    classes = _fixed_kernel_constraints(model, sol, policies, positive)
    mu_out = np.where(positive, 0.0, INF)
    if not classes:
        return LowerBoundReport(model, 0.0, mu_out, "no_navigation")
    evaluate = _fixed_kernel_evaluator(model, sol, classes, positive)
    outcome = _cutting_plane(model, gaps, None, evaluate, [], rhs, np.flatnonzero(positive))
    report = _finish(model, sol, "no_navigation", outcome, rhs, None, False)
    report.mu = np.where(positive, report.mu, INF)
    return report
