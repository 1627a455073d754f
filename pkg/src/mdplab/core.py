"""Exact solvers for finite average-reward MDPs.

Policy evaluation handles multichain policies: recurrent classes are the
closed strongly connected components of the policy's chain, the gain of a
transient state comes from absorption, and the bias is normalised to have
zero stationary mean on every recurrent class.
"""

from __future__ import annotations

import dataclasses
import itertools
from collections.abc import Iterator, Sequence

import numpy as np
from scipy.sparse import csgraph

from . import tolerances
from .errors import ConvergenceError, PreconditionError
from .model import Mdp, Policy


# ---------------------------------------------------------------------------
# validation and graph structure

@dataclasses.dataclass(frozen=True)
class Issue:
    code: str
    message: str
    ident: str | None = None

    def __str__(self):
        return f"{self.message}: {self.ident}" if self.ident is not None else self.message


@dataclasses.dataclass(frozen=True)
class ValidationReport:
    errors: tuple[Issue, ...]
    warnings: tuple[Issue, ...]
    n_states: int
    n_pairs: int

    @property
    def valid(self) -> bool:
        return not self.errors

    def summary(self) -> str:
        if self.valid:
            return f"valid: {self.n_states} states, {self.n_pairs} pairs"
        return "; ".join(str(e) for e in self.errors)


def validate(model: Mdp) -> ValidationReport:
    tol = tolerances.current().stochastic
    errors, warnings = [], []
    for s, block in enumerate(model.state_pairs):
        if len(block) == 0:
            errors.append(Issue("empty-actions", "empty action set", model.states[s]))
    for x, a in enumerate(model.actions):
        row = model.P[x]
        if (row < 0).any() or not np.isfinite(row).all() or abs(row.sum() - 1.0) > tol:
            errors.append(Issue("kernel", "kernel row not stochastic", a))
    if model.n_states and not errors:
        reach = csgraph.breadth_first_order(_union_graph(model), 0, directed=True,
                                            return_predecessors=False)
        for s in sorted(set(range(model.n_states)) - set(reach.tolist())):
            warnings.append(Issue("unreachable", "unreachable state", model.states[s]))
    return ValidationReport(tuple(errors), tuple(warnings), model.n_states, model.n_pairs)


def _union_graph(model: Mdp, pairs: Sequence[int] | None = None) -> np.ndarray:
    """State adjacency of the positive transitions of ``pairs`` (all pairs by default)."""
    adj = np.zeros((model.n_states, model.n_states), dtype=bool)
    rows = range(model.n_pairs) if pairs is None else pairs
    for x in rows:
        adj[model.pair_state[x]] |= model.P[x] > 0
    return adj


def strongly_connected(adj: np.ndarray) -> list[list[int]]:
    """SCCs of a boolean adjacency matrix, each sorted, ordered by smallest member."""
    if adj.shape[0] == 0:
        return []
    _, labels = csgraph.connected_components(adj.astype(np.int8), directed=True,
                                             connection="strong")
    groups: dict[int, list[int]] = {}
    for s, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(s)
    return sorted(groups.values(), key=lambda g: g[0])


def closed_classes(adj: np.ndarray, nodes: Sequence[int] | None = None) -> list[list[int]]:
    """Closed SCCs of the subgraph induced by ``nodes`` (no edge leaves the class)."""
    nodes = list(range(adj.shape[0])) if nodes is None else sorted(nodes)
    sub = adj[np.ix_(nodes, nodes)]
    out = []
    for comp in strongly_connected(sub):
        members = np.zeros(len(nodes), bool)
        members[comp] = True
        if not sub[comp][:, ~members].any():
            out.append([nodes[i] for i in comp])
    return out


def is_communicating(model: Mdp) -> bool:
    if model.n_states == 0:
        return False
    return len(strongly_connected(_union_graph(model))) == 1


# ---------------------------------------------------------------------------
# first passage and diameter

@dataclasses.dataclass(frozen=True)
class FirstPassage:
    target: int
    times: np.ndarray       # minimal expected hitting time from each state (0 at target)
    choice: tuple[int, ...]  # pair played at each state by an optimal routing policy


def first_passage(model: Mdp, target: int) -> FirstPassage:
    """Minimal expected hitting time of ``target`` from every state.

    Policy iteration on the stochastic shortest path problem, started from a
    proper routing policy built by backward breadth-first search.
    """
    n = model.n_states
    tol = tolerances.current().hitting
    dist = np.full(n, -1)
    dist[target] = 0
    choice = [model.state_pairs[s].start for s in range(n)]
    frontier = {target}
    level = 0
    while frontier:
        level += 1
        reached = set()
        for s in range(n):
            if dist[s] >= 0:
                continue
            for x in model.state_pairs[s]:
                hits = np.flatnonzero(model.P[x] > 0)
                if any(dist[j] >= 0 and dist[j] < level for j in hits):
                    dist[s] = level
                    choice[s] = x
                    reached.add(s)
                    break
        frontier = reached
    if (dist < 0).any():
        raise PreconditionError("infinite diameter")
    keep = np.ones(n, bool)
    keep[target] = False
    others = np.flatnonzero(keep)
    times = np.zeros(n)
    for _ in range(10 * n * max(1, model.n_pairs) + 10):
        Q = model.P[choice][np.ix_(others, others)]
        times = np.zeros(n)
        times[others] = np.linalg.solve(np.eye(len(others)) - Q, np.ones(len(others)))
        changed = False
        for s in others:
            block = model.state_pairs[s]
            vals = 1.0 + model.P[block.start:block.stop] @ times
            best = int(np.argmin(vals))
            if vals[best] < vals[choice[s] - block.start] - tol * max(1.0, abs(vals[best])):
                choice[s] = block.start + best
                changed = True
        if not changed:
            return FirstPassage(target, times, tuple(choice))
    raise ConvergenceError("first-passage policy iteration did not terminate")


def diameter(model: Mdp) -> float:
    if not is_communicating(model):
        raise PreconditionError("infinite diameter")
    if model.n_states == 1:
        return 0.0
    return max(float(first_passage(model, t).times.max()) for t in range(model.n_states))


# ---------------------------------------------------------------------------
# policy evaluation

@dataclasses.dataclass(frozen=True)
class PolicyEvaluation:
    gain: np.ndarray
    bias: np.ndarray
    recurrent_classes: tuple[tuple[int, ...], ...]
    class_stationary: tuple[np.ndarray, ...]   # per class, a probability vector over pairs
    state_stationary: tuple[np.ndarray, ...]   # per class, a probability vector over states
    recurrent_pairs: tuple[int, ...]
    transient_states: tuple[int, ...]
    chain: np.ndarray
    rewards: np.ndarray

    def class_gains(self) -> list[float]:
        return [float(self.gain[c[0]]) for c in self.recurrent_classes]

    def class_pairs(self, k: int) -> list[int]:
        return [int(x) for x in np.flatnonzero(self.class_stationary[k] > 0)]

    def stationary_pairs(self) -> np.ndarray:
        """Average of the class stationary measures (an invariant probability on pairs)."""
        return sum(self.class_stationary) / len(self.class_stationary)


def policy_matrix(model: Mdp, policy: Policy) -> np.ndarray:
    """(states x pairs) matrix with the policy's probabilities."""
    Pi = np.zeros((model.n_states, model.n_pairs))
    Pi[model.pair_state, np.arange(model.n_pairs)] = policy.probs
    return Pi


class _ChainSolver:
    """Stationary measures and Poisson solves for one fixed Markov chain."""

    def __init__(self, chain: np.ndarray):
        self.chain = chain
        n = chain.shape[0]
        self.classes = closed_classes(chain > 0)
        rec = sorted(s for c in self.classes for s in c)
        self.transient = sorted(set(range(n)) - set(rec))
        self.nus = []
        self.fundamentals = []
        try:
            for c in self.classes:
                Pc = chain[np.ix_(c, c)]
                k = len(c)
                A = Pc.T - np.eye(k)
                A[-1, :] = 1.0
                rhs = np.zeros(k)
                rhs[-1] = 1.0
                nu = np.linalg.solve(A, rhs)
                nu = np.clip(nu, 0.0, None)
                nu /= nu.sum()
                self.nus.append(nu)
                self.fundamentals.append(np.linalg.inv(np.eye(k) - Pc + np.outer(np.ones(k), nu)))
            T = self.transient
            self.transient_op = np.eye(len(T)) - chain[np.ix_(T, T)] if T else None
        except np.linalg.LinAlgError as exc:
            raise PreconditionError("degenerate chain") from exc

    def poisson(self, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Gain and bias of reward vector ``f`` with zero stationary mean bias per class."""
        n = self.chain.shape[0]
        g = np.zeros(n)
        b = np.zeros(n)
        for c, nu, Z in zip(self.classes, self.nus, self.fundamentals):
            gc = float(nu @ f[c])
            g[c] = gc
            bc = Z @ (f[c] - gc)
            bc -= nu @ bc
            b[c] = bc
        T = self.transient
        if T:
            R = [s for s in range(n) if s not in set(T)]
            PTR = self.chain[np.ix_(T, R)]
            try:
                g[T] = np.linalg.solve(self.transient_op, PTR @ g[R])
                b[T] = np.linalg.solve(self.transient_op, f[T] - g[T] + PTR @ b[R])
            except np.linalg.LinAlgError as exc:
                raise PreconditionError("degenerate chain") from exc
        return g, b


def policy_eval(model: Mdp, policy: Policy) -> PolicyEvaluation:
    Pi = policy_matrix(model, policy)
    chain = Pi @ model.P
    r_pi = Pi @ model.r
    solver = _ChainSolver(chain)
    g, b = solver.poisson(r_pi)
    class_pairs, rec_pairs = [], []
    for c, nu in zip(solver.classes, solver.nus):
        mu = np.zeros(model.n_pairs)
        for s, w in zip(c, nu):
            for x in model.state_pairs[s]:
                mu[x] = w * policy.probs[x]
        class_pairs.append(mu)
        rec_pairs.extend(int(x) for x in np.flatnonzero(mu > 0))
    state_nus = []
    for c, nu in zip(solver.classes, solver.nus):
        v = np.zeros(model.n_states)
        v[c] = nu
        state_nus.append(v)
    return PolicyEvaluation(
        gain=g, bias=b,
        recurrent_classes=tuple(tuple(c) for c in solver.classes),
        class_stationary=tuple(class_pairs),
        state_stationary=tuple(state_nus),
        recurrent_pairs=tuple(sorted(rec_pairs)),
        transient_states=tuple(solver.transient),
        chain=chain, rewards=r_pi,
    )


# ---------------------------------------------------------------------------
# deterministic policies

def enumerate_det_policies(model: Mdp, guard: int | None = None) -> Iterator[Policy]:
    """All deterministic policies, lexicographic in the per-state action order."""
    guard = tolerances.current().enumeration_guard if guard is None else guard
    if model.n_deterministic_policies() > guard:
        raise PreconditionError("instance too large for enumeration")
    for combo in itertools.product(*model.state_pairs):
        yield Policy.deterministic(model, combo)


def enumerate_det_choices(model: Mdp, guard: int | None = None) -> Iterator[tuple[int, ...]]:
    """Same order as :func:`enumerate_det_policies`, yielding the chosen pair per state."""
    guard = tolerances.current().enumeration_guard if guard is None else guard
    if model.n_deterministic_policies() > guard:
        raise PreconditionError("instance too large for enumeration")
    yield from itertools.product(*model.state_pairs)


# ---------------------------------------------------------------------------
# optimal solution and pair classification

@dataclasses.dataclass(frozen=True)
class OptimalSolution:
    gain_star: float
    bias_star: np.ndarray
    gaps: np.ndarray
    weakly_optimal: tuple[int, ...]
    optimal_pairs: tuple[int, ...]
    optimal_policy: Policy               # a bias-optimal deterministic policy
    optimal_det_policies: tuple[Policy, ...] | None
    method: str

    @property
    def span_bias(self) -> float:
        return float(self.bias_star.max() - self.bias_star.min())

    @property
    def suboptimal_pairs(self) -> tuple[int, ...]:
        wk = set(self.weakly_optimal)
        return tuple(x for x in range(len(self.gaps)) if x not in wk)

    @property
    def weakly_optimal_only(self) -> tuple[int, ...]:
        opt = set(self.optimal_pairs)
        return tuple(x for x in self.weakly_optimal if x not in opt)

    def classification(self, model: Mdp) -> dict[str, str]:
        opt, wk = set(self.optimal_pairs), set(self.weakly_optimal)
        return {a: "optimal" if x in opt else "weakly-optimal" if x in wk else "suboptimal"
                for x, a in enumerate(model.actions)}

    def optimal_mask(self) -> np.ndarray:
        m = np.zeros(len(self.gaps), bool)
        m[list(self.optimal_pairs)] = True
        return m


def bellman_gaps(model: Mdp, gain: float, bias: np.ndarray) -> np.ndarray:
    return gain + bias[model.pair_state] - model.r - model.P @ bias


def optimal_pair_set(model: Mdp, weakly_optimal: Sequence[int]) -> list[int]:
    """Pairs recurrent under some policy that only plays weakly optimal actions.

    Prunes pairs whose support leaves the set of live states or the strongly
    connected component of their own state, until stable.  What remains is a
    union of closed, strongly connected pieces, i.e. exactly the pairs that
    some gain-optimal policy visits infinitely often.
    """
    alive = set(weakly_optimal)
    while True:
        states = model.states_of_pairs(alive)
        alive = {x for x in alive
                 if set(np.flatnonzero(model.P[x] > 0).tolist()) <= states}
        adj = _union_graph(model, sorted(alive))
        comp_of = {}
        for k, comp in enumerate(strongly_connected(adj)):
            for s in comp:
                comp_of[s] = k
        kept = {x for x in alive
                if all(comp_of.get(j) == comp_of.get(int(model.pair_state[x]))
                       for j in np.flatnonzero(model.P[x] > 0))}
        if kept == alive and model.states_of_pairs(kept) == states:
            return sorted(kept)
        alive = kept


def solve_optimal(model: Mdp, method: str = "auto") -> OptimalSolution:
    """Optimal gain, bias-optimal bias, Bellman gaps and pair classification.

    ``method`` is ``"enumerate"``, ``"policy_iteration"`` or ``"auto"``
    (enumeration when the instance passes the guard).
    """
    if not is_communicating(model):
        raise PreconditionError("model is not communicating (infinite diameter)")
    tol = tolerances.current()
    if method == "auto":
        method = ("enumerate" if model.n_deterministic_policies() <= min(tol.enumeration_guard, 4096)
                  else "policy_iteration")
    if method == "enumerate":
        gain, bias, policy, optimal = _solve_by_enumeration(model)
    elif method == "policy_iteration":
        gain, bias, policy = _solve_by_policy_iteration(model)
        optimal = None
    else:
        raise ValueError(f"unknown method {method!r}")
    gaps = bellman_gaps(model, gain, bias)
    wk = tuple(int(x) for x in np.flatnonzero(gaps <= tol.wkopt))
    return OptimalSolution(
        gain_star=gain, bias_star=bias, gaps=gaps, weakly_optimal=wk,
        optimal_pairs=tuple(optimal_pair_set(model, wk)),
        optimal_policy=policy, optimal_det_policies=optimal, method=method,
    )


def _solve_by_enumeration(model: Mdp):
    evals = []
    best = -np.inf
    for choice in enumerate_det_choices(model):
        pol = Policy.deterministic(model, choice)
        ev = policy_eval(model, pol)
        evals.append((pol, ev))
        best = max(best, float(ev.gain.max()))
    slack = 1e-9 * max(1.0, abs(best))
    optimal = [(p, ev) for p, ev in evals if ev.gain.min() >= best - slack]
    # the bias-optimal policy dominates every other gain-optimal bias pointwise
    pol, ev = max(optimal, key=lambda pe: pe[1].bias.sum())
    return best, ev.bias.copy(), pol, tuple(p for p, _ in optimal)


def _solve_by_policy_iteration(model: Mdp):
    """Howard policy iteration with gain, bias and second-order bias improvement.

    The third level compares the next Laurent coefficient so the final policy
    is bias-optimal, which makes the returned bias canonical.
    """
    tol = tolerances.current().policy_iteration
    choice = [block.start for block in model.state_pairs]
    P, r = model.P, model.r
    for _ in range(100 * model.n_pairs + 100):
        pol = Policy.deterministic(model, choice)
        Pi = policy_matrix(model, pol)
        chain = Pi @ P
        solver = _ChainSolver(chain)
        g, b = solver.poisson(Pi @ r)
        _, w = solver.poisson(-b)
        levels = (P @ g, r + P @ b, P @ w)
        new = list(choice)
        for level in levels:
            changed = False
            for s, block in enumerate(model.state_pairs):
                idx = list(block)
                # restrict to actions tied at the previous levels
                mask = _tied_mask(levels, level, block, tol)
                cand = [i for i, m in zip(idx, mask) if m]
                cur = choice[s]
                best = max(cand, key=lambda x: (level[x], -x))
                if level[best] > level[cur] + tol * max(1.0, abs(level[best])) and cur in cand:
                    new[s] = best
                    changed = True
            if changed:
                break
        if new == choice:
            if g.max() - g.min() > 1e-8 * max(1.0, abs(g.max())):
                raise ConvergenceError("policy iteration ended with a non-constant gain")
            return float(g.max()), b, pol
        choice = new
    raise ConvergenceError("policy iteration did not terminate")


def _tied_mask(levels, level, block, tol):
    """Pairs of ``block`` tied with the best value on every level before ``level``."""
    mask = np.ones(block.stop - block.start, bool)
    for prev in levels:
        if prev is level:
            break
        vals = prev[block.start:block.stop]
        top = vals[mask].max()
        mask &= vals >= top - tol * max(1.0, abs(top))
    return mask


def gain_optimal(model: Mdp, policy: Policy, solution: OptimalSolution, ev: PolicyEvaluation | None = None) -> bool:
    ev = policy_eval(model, policy) if ev is None else ev
    return bool(ev.gain.min() >= solution.gain_star - 1e-9 * max(1.0, abs(solution.gain_star)))


def optimal_gain_vector(model: Mdp) -> np.ndarray:
    """State-wise optimal gain of a possibly multichain model (gain and bias improvement)."""
    tol = tolerances.current().policy_iteration
    choice = [block.start for block in model.state_pairs]
    P, r = model.P, model.r
    for _ in range(100 * model.n_pairs + 100):
        Pi = policy_matrix(model, Policy.deterministic(model, choice))
        g, b = _ChainSolver(Pi @ P).poisson(Pi @ r)
        levels = (P @ g, r + P @ b)
        new = list(choice)
        for level in levels:
            changed = False
            for s, block in enumerate(model.state_pairs):
                mask = _tied_mask(levels, level, block, tol)
                cand = [x for x, m in zip(block, mask) if m]
                best = max(cand, key=lambda x: (level[x], -x))
                if choice[s] in cand and level[best] > level[choice[s]] + tol * max(1.0, abs(level[best])):
                    new[s] = best
                    changed = True
            if changed:
                break
        if new == choice:
            return g
        choice = new
    raise ConvergenceError("policy iteration did not terminate")
