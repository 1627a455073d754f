"""Closed pair sets, minors, invariant measures and inevitability."""

from __future__ import annotations

import dataclasses
from collections.abc import Iterable

import numpy as np

from . import tolerances
from .core import (OptimalSolution, closed_classes, policy_eval, solve_optimal,
                   strongly_connected, _union_graph)
from .errors import LPInfeasible, PreconditionError
from .lp import solve_lp
from .model import Mdp


def _pair_ids(model: Mdp, pairs: Iterable) -> list[int]:
    return sorted({model.pair(x) for x in pairs})


@dataclasses.dataclass(frozen=True)
class ClosedCheck:
    closed: bool
    reason: str
    components: tuple[tuple[int, ...], ...]

    def __bool__(self):
        return self.closed


def is_closed(model: Mdp, pairs: Iterable) -> ClosedCheck:
    """Forward closed (kernels stay on the set's states) and free of transient states."""
    ids = _pair_ids(model, pairs)
    if not ids:
        return ClosedCheck(False, "empty pair set", ())
    states = model.states_of_pairs(ids)
    for x in ids:
        leaving = set(np.flatnonzero(model.P[x] > 0).tolist()) - states
        if leaving:
            return ClosedCheck(False, f"{model.actions[x]} leaves the set towards "
                               f"{model.states[min(leaving)]}", ())
    adj = _union_graph(model, ids)
    nodes = sorted(states)
    comps = strongly_connected(adj[np.ix_(nodes, nodes)])
    comps = [[nodes[i] for i in c] for c in comps]
    closed = closed_classes(adj, nodes)
    if len(closed) != len(comps):
        transient = sorted(set(nodes) - {s for c in closed for s in c})
        return ClosedCheck(False, f"state {model.states[transient[0]]} is transient in the set", ())
    return ClosedCheck(True, "closed", tuple(tuple(c) for c in comps))


# ---------------------------------------------------------------------------
# contraction

@dataclasses.dataclass(frozen=True)
class ContractedMdp:
    """Minor ``base / contracted_set``.

    ``minor`` is an ordinary :class:`Mdp` over the merged states; its pair
    order may differ from the base order, so ``pair_map[x]`` gives the minor
    index of base pair ``x``.  Measures handled by this module stay indexed
    by base pairs.
    """

    base: Mdp
    contracted_set: tuple[int, ...]
    state_map: tuple[int, ...]       # base state -> minor state index
    minor: Mdp
    pair_map: tuple[int, ...]

    def lift(self, mu_minor) -> np.ndarray:
        """Base-indexed copy of a minor-indexed pair vector."""
        mu_minor = np.asarray(mu_minor, dtype=float)
        return mu_minor[list(self.pair_map)]

    def to_minor(self, mu_base) -> np.ndarray:
        out = np.zeros(self.minor.n_pairs)
        out[list(self.pair_map)] = np.asarray(mu_base, dtype=float)
        return out


def merged_name(model: Mdp, comp: Iterable[int]) -> str:
    return "[" + "+".join(model.states[s] for s in sorted(comp)) + "]"


def contract(model: Mdp, pairs: Iterable) -> ContractedMdp:
    ids = _pair_ids(model, pairs)
    check = is_closed(model, ids) if ids else ClosedCheck(True, "empty", ())
    if not check:
        raise PreconditionError(f"contraction of non-closed set ({check.reason})")
    groups: list[list[int]] = []
    comp_of = {}
    for comp in check.components:
        for s in comp:
            comp_of[s] = comp
    done = set()
    names = []
    for s in range(model.n_states):
        if s in done:
            continue
        members = list(comp_of.get(s, (s,)))
        done.update(members)
        groups.append(members)
        names.append(merged_name(model, members) if s in comp_of else model.states[s])
    state_map = [0] * model.n_states
    for k, g in enumerate(groups):
        for s in g:
            state_map[s] = k
    P = np.zeros((model.n_pairs, len(groups)))
    for s in range(model.n_states):
        P[:, state_map[s]] += model.P[:, s]
    order = sorted(range(model.n_pairs), key=lambda x: (state_map[model.pair_state[x]], x))
    pairs_minor = [(names[state_map[model.pair_state[x]]], model.actions[x]) for x in order]
    minor = Mdp.from_arrays(names, pairs_minor, P[order], [model.rewards[x] for x in order])
    pair_map = [0] * model.n_pairs
    for i, x in enumerate(order):
        pair_map[x] = i
    return ContractedMdp(model, tuple(ids), tuple(state_map), minor, tuple(pair_map))


# ---------------------------------------------------------------------------
# invariant measures

@dataclasses.dataclass(frozen=True)
class InvariantSystem:
    """Rows: one flow equation per (merged) state; columns: base pairs.

    ``matrix @ mu = 0`` encodes sum_x p(s|x) mu(x) = sum_a mu(s, a).
    """

    matrix: np.ndarray
    state_labels: tuple[str, ...]

    def residual(self, mu) -> np.ndarray:
        return self.matrix @ np.asarray(mu, dtype=float)


def invariant_system(model: Mdp | ContractedMdp) -> InvariantSystem:
    if isinstance(model, ContractedMdp):
        base = model.base
        k = model.minor.n_states
        A = np.zeros((k, base.n_pairs))
        for s in range(base.n_states):
            A[model.state_map[s]] += base.P[:, s]
        for x in range(base.n_pairs):
            A[model.state_map[base.pair_state[x]], x] -= 1.0
        return InvariantSystem(A, model.minor.states)
    A = model.P.T.copy()
    A[model.pair_state, np.arange(model.n_pairs)] -= 1.0
    return InvariantSystem(A, model.states)


def is_invariant(mu, system: InvariantSystem, tol: float | None = None) -> bool:
    tol = tolerances.current().invariant if tol is None else tol
    mu = np.asarray(mu, dtype=float)
    if (mu < -tol).any() or not np.isfinite(mu).all():
        return False
    return bool(np.abs(system.residual(mu)).max(initial=0.0) <= tol)


def represent_contracted(model: Mdp, contracted_mu, solution: OptimalSolution | None = None) -> np.ndarray:
    """Lift a measure of ``model / X_opt`` to an invariant measure of ``model``.

    Off ``X_opt`` the output equals the input; on ``X_opt`` it is the
    least-mass nonnegative completion that balances every flow equation.
    """
    sol = solve_optimal(model) if solution is None else solution
    opt = list(sol.optimal_pairs)
    mu = np.asarray(contracted_mu, dtype=float).copy()
    minor = contract(model, opt)
    if not is_invariant(mu, invariant_system(minor)):
        raise PreconditionError("measure is not invariant in the contracted model")
    mu[opt] = 0.0
    A = invariant_system(model).matrix
    if not opt:
        return mu
    rhs = -(A @ mu)
    res = solve_lp(np.ones(len(opt)), A_eq=A[:, opt], b_eq=rhs)
    mu[opt] = np.clip(res.x, 0.0, None)
    return mu


def representation_gap(model: Mdp, contracted_mu, solution: OptimalSolution | None = None) -> float:
    """Max deviation off X_opt between the input and its lift (0 when representable)."""
    sol = solve_optimal(model) if solution is None else solution
    try:
        lifted = represent_contracted(model, contracted_mu, sol)
    except LPInfeasible:
        return float("inf")
    off = np.ones(model.n_pairs, bool)
    off[list(sol.optimal_pairs)] = False
    return float(np.abs(lifted[off] - np.asarray(contracted_mu)[off]).max(initial=0.0))


# ---------------------------------------------------------------------------
# inevitability

def is_inevitable(model: Mdp, pairs: Iterable, solution: OptimalSolution | None = None) -> bool:
    """Every recurrent class of every deterministic gain-optimal policy meets ``pairs``."""
    ids = set(_pair_ids(model, pairs))
    if not ids:
        return False
    sol = solution if solution is not None and solution.optimal_det_policies is not None \
        else solve_optimal(model, "enumerate")
    for pol in sol.optimal_det_policies:
        ev = policy_eval(model, pol)
        for k in range(len(ev.recurrent_classes)):
            if not ids & set(ev.class_pairs(k)):
                return False
    return True
