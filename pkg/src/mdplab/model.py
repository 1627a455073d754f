"""Finite MDPs, reward distributions, stationary policies and their JSON form.

Pairs are indexed in canonical order: states in their declared order, and
within a state its actions in declared order.  Every vector over pairs in
the library (measures, gaps, kernels) uses that index.
"""

from __future__ import annotations

import dataclasses
import json
import math
from collections.abc import Mapping, Sequence
from typing import Any

import numpy as np
from scipy import special

from .errors import InputError, ModelError

KINDS = ("bernoulli", "gaussian", "dirac")


@dataclasses.dataclass(frozen=True)
class RewardDist:
    """Reward distribution of one pair.

    ``loc`` is the Bernoulli mean, the Gaussian mean or the Dirac atom;
    ``var`` is only meaningful for Gaussians.  A Gaussian with zero variance
    is normalised to a Dirac at construction.
    """

    kind: str
    loc: float
    var: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError("unknown reward kind", self.kind)
        loc = float(self.loc)
        var = float(self.var)
        if not math.isfinite(loc):
            raise ModelError("reward location must be finite", self.loc)
        if self.kind == "bernoulli" and not 0.0 <= loc <= 1.0:
            raise ModelError("bernoulli mean outside [0, 1]", loc)
        if self.kind == "gaussian":
            if not var >= 0.0 or not math.isfinite(var):
                raise ModelError("gaussian variance must be finite and >= 0", var)
            if var == 0.0:
                object.__setattr__(self, "kind", "dirac")
        if self.kind != "gaussian":
            var = 0.0
        object.__setattr__(self, "loc", loc)
        object.__setattr__(self, "var", var)

    @classmethod
    def bernoulli(cls, p: float) -> RewardDist:
        return cls("bernoulli", p)

    @classmethod
    def gaussian(cls, mean: float, var: float) -> RewardDist:
        return cls("gaussian", mean, var)

    @classmethod
    def dirac(cls, value: float) -> RewardDist:
        return cls("dirac", value)

    def mean(self) -> float:
        return self.loc

    def mean_range(self) -> tuple[float, float]:
        """Closed range of means reachable inside the same family."""
        if self.kind == "bernoulli":
            return 0.0, 1.0
        if self.kind == "gaussian":
            return -math.inf, math.inf
        return self.loc, self.loc

    def with_mean(self, mean: float) -> RewardDist:
        if self.kind == "dirac" and mean != self.loc:
            raise ModelError("a dirac reward cannot be moved", self.loc)
        return RewardDist(self.kind, mean, self.var)

    def logpdf(self, x) -> np.ndarray:
        """Log density (Gaussian) or log mass (Bernoulli, Dirac) at ``x``."""
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            if self.kind == "bernoulli":
                return np.where(x == 1.0, np.log(self.loc),
                                np.where(x == 0.0, np.log1p(-self.loc), -np.inf))
            if self.kind == "gaussian":
                return -0.5 * (np.log(2 * np.pi * self.var) + (x - self.loc) ** 2 / self.var)
            return np.where(x == self.loc, 0.0, -np.inf)

    def from_uniform(self, u) -> np.ndarray:
        """Inverse-CDF sample driven by uniforms in [0, 1)."""
        u = np.asarray(u, dtype=float)
        if self.kind == "bernoulli":
            return (u < self.loc).astype(float)
        if self.kind == "gaussian":
            u = np.clip(u, 2.0**-60, 1.0 - 2.0**-53)
            return self.loc + math.sqrt(self.var) * special.ndtri(u)
        return np.full(u.shape, self.loc)

    def to_json(self) -> dict:
        if self.kind == "bernoulli":
            return {"kind": "bernoulli", "mean": self.loc}
        if self.kind == "gaussian":
            return {"kind": "gaussian", "mean": self.loc, "var": self.var}
        return {"kind": "dirac", "value": self.loc}

    @classmethod
    def from_json(cls, data: Mapping[str, Any], ident=None) -> RewardDist:
        try:
            kind = data["kind"]
            if kind == "bernoulli":
                return cls.bernoulli(data["mean"])
            if kind == "gaussian":
                return cls.gaussian(data["mean"], data.get("var", 0.0))
            if kind == "dirac":
                return cls.dirac(data["value"])
        except (KeyError, TypeError) as exc:
            raise ModelError(f"malformed reward ({exc})", ident) from exc
        raise ModelError("unknown reward kind", kind)


class Mdp:
    """A finite MDP with globally unique action identifiers.

    Instances are treated as immutable; ``with_pairs`` returns a modified copy.
    Construction checks identifiers only.  Stochasticity and reachability are
    reported by :func:`mdplab.core.validate` so that broken models can still be
    inspected.
    """

    def __init__(self, states: Sequence[str], actions: Mapping[str, Sequence[str]],
                 kernel: Mapping[str, Mapping[str, float]], rewards: Mapping[str, RewardDist]):
        states = tuple(str(s) for s in states)
        state_index = {s: i for i, s in enumerate(states)}
        if len(state_index) != len(states):
            raise ModelError("duplicate state identifier", _first_duplicate(states))
        for s in actions:
            if s not in state_index:
                raise ModelError("actions listed for unknown state", s)
        pairs = []
        for s in states:
            for a in actions.get(s, ()):
                pairs.append((s, str(a)))
        seen = set()
        for _, a in pairs:
            if a in seen:
                raise ModelError("action identifier used twice", a)
            seen.add(a)
        P = np.zeros((len(pairs), len(states)))
        rew = []
        for i, (s, a) in enumerate(pairs):
            if a not in kernel:
                raise ModelError("missing kernel row", a)
            for target, prob in kernel[a].items():
                if target not in state_index:
                    raise ModelError(f"kernel of {a} points to unknown state", target)
                P[i, state_index[target]] = float(prob)
            if a not in rewards:
                raise ModelError("missing reward", a)
            dist = rewards[a]
            rew.append(dist if isinstance(dist, RewardDist) else RewardDist.from_json(dist, a))
        self._setup(states, pairs, P, rew)

    @classmethod
    def from_arrays(cls, states: Sequence[str], pairs: Sequence[tuple[str, str]],
                    kernel: np.ndarray, rewards: Sequence[RewardDist]) -> Mdp:
        """Build from a pair list already in canonical order."""
        obj = cls.__new__(cls)
        states = tuple(states)
        pairs = [tuple(p) for p in pairs]
        order = {s: i for i, s in enumerate(states)}
        if [order[s] for s, _ in pairs] != sorted(order[s] for s, _ in pairs):
            raise ModelError("pairs are not grouped by state in state order")
        obj._setup(states, pairs, np.array(kernel, dtype=float), list(rewards))
        return obj

    def _setup(self, states, pairs, P, rewards):
        self.states = states
        self.state_index = {s: i for i, s in enumerate(states)}
        self.pairs = tuple(pairs)
        self.actions = tuple(a for _, a in pairs)
        self.action_index = {a: i for i, a in enumerate(self.actions)}
        if len(self.action_index) != len(self.actions):
            raise ModelError("action identifier used twice", _first_duplicate(self.actions))
        self.pair_state = np.array([self.state_index[s] for s, _ in pairs], dtype=int)
        if P.shape != (len(pairs), len(states)):
            raise ModelError("kernel has the wrong shape", P.shape)
        P.setflags(write=False)
        self.P = P
        self.rewards = tuple(rewards)
        self.r = np.array([d.mean() for d in rewards], dtype=float)
        self.r.setflags(write=False)
        counts = np.bincount(self.pair_state, minlength=len(states))
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        self.state_pairs = tuple(range(int(b), int(b + c)) for b, c in zip(starts, counts))

    # -- sizes and lookups -------------------------------------------------
    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    def pair(self, key) -> int:
        """Pair index from an index, an action id or a ``(state, action)`` tuple."""
        if isinstance(key, (int, np.integer)):
            if not 0 <= key < self.n_pairs:
                raise InputError(f"pair index out of range: {key}")
            return int(key)
        if isinstance(key, tuple):
            key = key[1]
        try:
            return self.action_index[key]
        except KeyError:
            raise InputError(f"unknown action: {key}") from None

    def actions_of(self, state) -> tuple[str, ...]:
        s = state if isinstance(state, (int, np.integer)) else self.state_index[state]
        return tuple(self.actions[i] for i in self.state_pairs[s])

    def pairs_of_states(self, state_ids) -> list[int]:
        return [x for s in sorted(state_ids) for x in self.state_pairs[s]]

    def states_of_pairs(self, pair_ids) -> set[int]:
        return {int(self.pair_state[x]) for x in pair_ids}

    def same_layout(self, other: Mdp) -> bool:
        return self.states == other.states and self.pairs == other.pairs

    def n_deterministic_policies(self) -> int:
        return math.prod(len(r) for r in self.state_pairs)

    # -- modification --------------------------------------------------------
    def with_pairs(self, changes: Mapping[int, tuple[np.ndarray | None, RewardDist | None]]) -> Mdp:
        """Copy with the kernel row and/or reward of some pairs replaced."""
        P = self.P.copy()
        rewards = list(self.rewards)
        for x, (row, dist) in changes.items():
            if row is not None:
                P[x] = row
            if dist is not None:
                rewards[x] = dist
        obj = Mdp.__new__(Mdp)
        obj._setup(self.states, self.pairs, P, rewards)
        return obj

    def to_json(self) -> dict:
        actions = {s: list(self.actions_of(i)) for i, s in enumerate(self.states)}
        kernel = {}
        for x, a in enumerate(self.actions):
            kernel[a] = {self.states[j]: float(self.P[x, j]) for j in np.flatnonzero(self.P[x])}
        rewards = {a: self.rewards[x].to_json() for x, a in enumerate(self.actions)}
        return {"states": list(self.states), "actions": actions, "kernel": kernel, "rewards": rewards}

    def __eq__(self, other):
        if not isinstance(other, Mdp):
            return NotImplemented
        return (self.same_layout(other) and np.array_equal(self.P, other.P)
                and self.rewards == other.rewards)

    def __hash__(self):
        return hash((self.states, self.pairs))

    def __repr__(self):
        return f"Mdp({self.n_states} states, {self.n_pairs} pairs)"


def _first_duplicate(items):
    seen = set()
    for it in items:
        if it in seen:
            return it
        seen.add(it)
    return None


class Policy:
    """Stationary randomized policy, stored as a probability per pair."""

    def __init__(self, model: Mdp, probs):
        probs = np.array(probs, dtype=float)
        if probs.shape != (model.n_pairs,):
            raise InputError("policy vector has the wrong length")
        if (probs < 0).any():
            raise InputError("policy has negative probabilities")
        for s, block in enumerate(model.state_pairs):
            total = probs[block.start:block.stop].sum()
            if abs(total - 1.0) > 1e-12:
                raise InputError(f"policy row not stochastic at state {model.states[s]}")
        probs.setflags(write=False)
        self.probs = probs
        self.layout = model.pairs

    @classmethod
    def deterministic(cls, model: Mdp, choice) -> Policy:
        """``choice`` maps each state to an action (id or index), or lists one pair per state."""
        probs = np.zeros(model.n_pairs)
        if isinstance(choice, Mapping):
            items = [(model.state_index[s], model.pair(a)) for s, a in choice.items()]
            given = {s for s, _ in items}
            if len(given) != model.n_states:
                missing = [model.states[s] for s in range(model.n_states) if s not in given]
                raise InputError(f"policy misses states: {missing}")
        else:
            items = list(enumerate(model.pair(x) for x in choice))
        for s, x in items:
            if model.pair_state[x] != s:
                raise InputError(f"action {model.actions[x]} is not available at {model.states[s]}")
            probs[x] = 1.0
        return cls(model, probs)

    @classmethod
    def uniform(cls, model: Mdp, allowed=None) -> Policy:
        """Uniform over ``allowed`` pairs (all pairs by default) at every state."""
        mask = np.ones(model.n_pairs, bool) if allowed is None else np.zeros(model.n_pairs, bool)
        if allowed is not None:
            mask[list(allowed)] = True
        probs = np.zeros(model.n_pairs)
        for s, block in enumerate(model.state_pairs):
            idx = [x for x in block if mask[x]]
            if not idx:
                raise InputError(f"no allowed action at {model.states[s]}")
            probs[idx] = 1.0 / len(idx)
        return cls(model, probs)

    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0.0) | (self.probs == 1.0)))

    def choices(self) -> list[int]:
        """Pair chosen at each state (deterministic policies only)."""
        if not self.is_deterministic():
            raise InputError("policy is not deterministic")
        return [int(x) for x in np.flatnonzero(self.probs)]

    def support(self) -> list[int]:
        return [int(x) for x in np.flatnonzero(self.probs > 0)]

    def to_json(self, model: Mdp) -> dict:
        out = {}
        for s, block in enumerate(model.state_pairs):
            if self.is_deterministic():
                out[model.states[s]] = next(model.actions[x] for x in block if self.probs[x] == 1.0)
            else:
                out[model.states[s]] = {model.actions[x]: float(self.probs[x])
                                        for x in block if self.probs[x] > 0}
        return out

    @classmethod
    def from_json(cls, model: Mdp, data: Mapping[str, Any]) -> Policy:
        if all(isinstance(v, str) for v in data.values()):
            return cls.deterministic(model, data)
        probs = np.zeros(model.n_pairs)
        for s, row in data.items():
            if s not in model.state_index:
                raise InputError(f"policy refers to unknown state {s}")
            if isinstance(row, str):
                row = {row: 1.0}
            for a, p in row.items():
                x = model.pair(a)
                if model.pairs[x][0] != s:
                    raise InputError(f"action {a} is not available at {s}")
                probs[x] = float(p)
        return cls(model, probs)

    def __eq__(self, other):
        return isinstance(other, Policy) and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(self.probs.tobytes())

    def __repr__(self):
        return f"Policy({self.probs.tolist()})"


def model_from_json(data: Mapping[str, Any]) -> Mdp:
    try:
        return Mdp(data["states"], data["actions"], data["kernel"], data["rewards"])
    except KeyError as exc:
        raise InputError(f"model JSON misses key {exc}") from exc
    except (TypeError, AttributeError) as exc:
        raise InputError(f"malformed model JSON ({exc})") from exc


def read_json(path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON in {path}: {exc}") from exc


def load_model(path) -> Mdp:
    return model_from_json(read_json(path))


def load_named_policies(model: Mdp, data: Mapping[str, Any]) -> dict[str, Policy]:
    """Optional ``"policies"`` block of a model file: name -> policy JSON."""
    return {name: Policy.from_json(model, entry) for name, entry in data.get("policies", {}).items()}
