"""Numerical tolerance bundle.

Every routine reads the active bundle through :func:`current`.  The default
bundle can be overridden process-wide with the ``MDPLAB_TOL`` environment
variable (``"zeta=1e-8,lp=1e-10"``) or locally with :func:`override`.
"""

from __future__ import annotations

import contextlib
import contextvars
import dataclasses
import os


@dataclasses.dataclass(frozen=True)
class Tolerances:
    stochastic: float = 1e-12   # kernel / policy rows must sum to 1 within this
    wkopt: float = 1e-9         # Bellman gap below which a pair is weakly optimal
    zeta: float = 1e-9          # strictness margin for optimistic / beneficial sets
    gain: float = 1e-12         # strict gain comparisons in certificates
    invariant: float = 1e-9     # per-equation residual for invariant measures
    lp: float = 1e-9            # simplex feasibility / optimality tolerance
    bisection: float = 1e-10    # multiplier bisection tolerance
    hitting: float = 1e-10      # first-passage solves
    policy_iteration: float = 1e-10
    cut_convergence: float = 1e-6
    max_rounds: int = 500
    enumeration_guard: int = 10**6


def parse_overrides(text: str) -> dict:
    """Parse ``"key=value,key=value"`` into a dict of typed overrides."""
    fields = {f.name: f.type for f in dataclasses.fields(Tolerances)}
    out = {}
    for chunk in filter(None, (c.strip() for c in text.split(","))):
        if "=" not in chunk:
            raise ValueError(f"malformed tolerance override {chunk!r}")
        key, raw = (s.strip() for s in chunk.split("=", 1))
        if key not in fields:
            raise ValueError(f"unknown tolerance {key!r}")
        value = int(float(raw)) if fields[key] in ("int", int) else float(raw)
        if value < 0:
            raise ValueError(f"tolerance {key!r} must be >= 0")
        out[key] = value
    return out


def from_environment() -> Tolerances:
    text = os.environ.get("MDPLAB_TOL", "")
    return dataclasses.replace(Tolerances(), **parse_overrides(text)) if text else Tolerances()


_ACTIVE: contextvars.ContextVar[Tolerances] = contextvars.ContextVar("mdplab_tol")


def current() -> Tolerances:
    try:
        return _ACTIVE.get()
    except LookupError:
        tol = from_environment()
        _ACTIVE.set(tol)
        return tol


@contextlib.contextmanager
def using(tol: Tolerances):
    token = _ACTIVE.set(tol)
    try:
        yield tol
    finally:
        _ACTIVE.reset(token)


def override(**changes):
    return using(dataclasses.replace(current(), **changes))


def activate(tol: Tolerances) -> None:
    _ACTIVE.set(tol)
