"""Dense two-phase primal simplex with Bland's anti-cycling rule.

Solves  min c.x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  x >= 0.
Small and deterministic by design: the problems built by this package have
at most a few hundred columns.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import tolerances
from .errors import ConvergenceError, LPInfeasible, LPUnbounded


@dataclasses.dataclass(frozen=True)
class LpResult:
    x: np.ndarray
    value: float
    iterations: int


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    colvals = T[:, col].copy()
    colvals[row] = 0.0
    T -= np.outer(colvals, T[row])


def _run(T: np.ndarray, basis: list[int], n_cols: int, tol: float, limit: int) -> int:
    """Simplex on a canonical tableau whose last row holds reduced costs."""
    m = len(basis)
    for it in range(limit):
        costs = T[-1, :n_cols]
        entering = np.flatnonzero(costs < -tol)
        if entering.size == 0:
            return it
        col = int(entering[0])
        column = T[:m, col]
        rows = np.flatnonzero(column > tol)
        if rows.size == 0:
            raise LPUnbounded("linear program is unbounded")
        ratios = T[rows, -1] / column[rows]
        best = ratios.min()
        ties = rows[ratios <= best + tol * max(1.0, abs(best))]
        row = int(min(ties, key=lambda i: basis[i]))
        _pivot(T, row, col)
        basis[row] = col
    raise ConvergenceError("simplex iteration limit reached")


def solve_lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, tol: float | None = None,
             max_iter: int = 100_000) -> LpResult:
    tol = tolerances.current().lp if tol is None else tol
    c = np.asarray(c, dtype=float)
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    if A_ub.size == 0:
        A_ub = A_ub.reshape(0, n)
    if A_eq.size == 0:
        A_eq = A_eq.reshape(0, n)
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq
    n_std = n + m_ub

    A = np.zeros((m, n_std))
    A[:m_ub, :n] = A_ub
    A[:m_ub, n:] = np.eye(m_ub)
    A[m_ub:, :n] = A_eq
    b = np.concatenate([b_ub, b_eq])
    flip = b < 0
    A[flip] *= -1.0
    b[flip] *= -1.0

    # slack columns serve as the initial basis where they can; artificials elsewhere
    basis = [-1] * m
    for i in range(m_ub):
        if not flip[i]:
            basis[i] = n + i
    need = [i for i in range(m) if basis[i] < 0]
    n_art = len(need)
    T = np.zeros((m + 1, n_std + n_art + 1))
    T[:m, :n_std] = A
    T[:m, -1] = b
    for k, i in enumerate(need):
        T[i, n_std + k] = 1.0
        basis[i] = n_std + k
    iterations = 0
    if n_art:
        T[-1, n_std:n_std + n_art] = 1.0
        for i in need:
            T[-1] -= T[i]
        iterations += _run(T, basis, n_std + n_art, tol, max_iter)
        scale = max(1.0, float(np.abs(b).max(initial=0.0)))
        if -T[-1, -1] > tol * scale * 10:
            raise LPInfeasible("linear program is infeasible")
        # drive zero-level artificials out of the basis, dropping redundant rows
        keep = []
        for i in range(m):
            if basis[i] >= n_std:
                cand = np.flatnonzero(np.abs(T[i, :n_std]) > tol)
                if cand.size:
                    _pivot(T, i, int(cand[0]))
                    basis[i] = int(cand[0])
                    keep.append(i)
            else:
                keep.append(i)
        T = np.vstack([T[keep], T[-1:]])
        basis = [basis[i] for i in keep]
        T = np.delete(T, np.s_[n_std:n_std + n_art], axis=1)
    m = len(basis)
    cost = np.zeros(n_std)
    cost[:n] = c
    T[-1, :] = 0.0
    T[-1, :n_std] = cost
    for i, j in enumerate(basis):
        if cost[j] != 0.0:
            T[-1] -= cost[j] * T[i]
    iterations += _run(T, basis, n_std, tol, max_iter)
    x = np.zeros(n_std)
    for i, j in enumerate(basis):
        x[j] = T[i, -1]
    x = np.clip(x[:n], 0.0, None)
    return LpResult(x=x, value=float(c @ x), iterations=iterations)
