"""Knapsack embeddings: widget families, closed forms and brute-force deciders.

Items are numbered from 1.  A subset K of items is a tuple of item numbers.

Two families are built.  The *full* model is the multi-action MDP whose
deterministic policies are indexed by subsets; the *reference* model M_0 and
its variants M_K are the single-action reward processes obtained by fixing a
policy (all on the same pair space, so KL between them is pairwise).
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from collections.abc import Iterable, Iterator
from fractions import Fraction

import numpy as np

from .divergence import info_value
from .errors import InputError, PreconditionError
from .model import Mdp, Policy, RewardDist

VARIANTS = ("confusing_model", "regret")
EPSILON = 0.25
LOG43 = math.log(4.0 / 3.0)
MAX_ITEMS = 20


@dataclasses.dataclass(frozen=True)
class KnapsackInstance:
    values: tuple[int, ...]
    weights: tuple[int, ...]
    capacity: int
    threshold: int

    def __post_init__(self):
        values = tuple(int(v) for v in self.values)
        weights = tuple(int(w) for w in self.weights)
        if len(values) != len(weights):
            raise InputError("values and weights have different lengths")
        if not values:
            raise InputError("a knapsack instance needs at least one item")
        if min(values) < 1 or min(weights) < 1:
            raise InputError("item values and weights must be positive integers")
        if int(self.capacity) < 0 or int(self.threshold) < 1:
            raise InputError("capacity must be >= 0 and the value threshold >= 1")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "capacity", int(self.capacity))
        object.__setattr__(self, "threshold", int(self.threshold))

    @property
    def n(self) -> int:
        return len(self.values)

    def value_of(self, subset: Iterable[int]) -> int:
        return sum(self.values[k - 1] for k in subset)

    def weight_of(self, subset: Iterable[int]) -> int:
        return sum(self.weights[k - 1] for k in subset)

    def is_solution(self, subset: Iterable[int]) -> bool:
        subset = tuple(subset)
        return self.weight_of(subset) <= self.capacity and self.value_of(subset) >= self.threshold


def subsets(n: int) -> Iterator[tuple[int, ...]]:
    """All subsets of 1..n, by size then lexicographically."""
    if n > MAX_ITEMS:
        raise PreconditionError("instance too large for enumeration")
    for size in range(n + 1):
        yield from itertools.combinations(range(1, n + 1), size)


# ---------------------------------------------------------------------------
# knapsack oracle

@dataclasses.dataclass(frozen=True)
class KnapsackSolution:
    value: int
    items: tuple[int, ...]


def kp_oracle(kp: KnapsackInstance, capacity: int | None = None) -> KnapsackSolution:
    """Max-value subset of total weight <= capacity (dynamic programming over capacity)."""
    cap = kp.capacity if capacity is None else int(capacity)
    if cap < 0:
        return KnapsackSolution(-1, ())
    best = np.zeros((kp.n + 1, cap + 1), dtype=np.int64)
    for i, (v, w) in enumerate(zip(kp.values, kp.weights), start=1):
        best[i] = best[i - 1]
        if w <= cap:
            best[i, w:] = np.maximum(best[i - 1, w:], best[i - 1, :cap + 1 - w] + v)
    items, c = [], cap
    for i in range(kp.n, 0, -1):
        if best[i, c] != best[i - 1, c]:
            items.append(i)
            c -= kp.weights[i - 1]
    return KnapsackSolution(int(best[kp.n, cap]), tuple(sorted(items)))


def kp_feasible(kp: KnapsackInstance) -> bool:
    return kp_oracle(kp).value >= kp.threshold


def co_kp_holds(kp: KnapsackInstance) -> bool:
    """Every subset reaching the value threshold weighs at least the capacity."""
    return kp_oracle(kp, kp.capacity - 1).value < kp.threshold


# ---------------------------------------------------------------------------
# widget family

def choose(k): return f"choose-{k}"
def pick(k): return f"pick-{k}"
def skip(k): return f"skip-{k}"


ZERO = "zero"


@dataclasses.dataclass(frozen=True)
class WidgetFamily:
    kp: KnapsackInstance
    variant: str
    epsilon: float
    delta: float
    sigma2: float

    @property
    def n(self) -> int:
        return self.kp.n

    @property
    def cycle_length(self) -> int:
        return 2 * self.n + (1 if self.variant == "regret" else 0)

    @property
    def states(self) -> list[str]:
        out = [ZERO] if self.variant == "regret" else []
        for k in range(1, self.n + 1):
            out += [choose(k), pick(k), skip(k)]
        return out

    def _next_choose(self, k: int) -> str:
        if self.variant == "regret" and k == self.n:
            return ZERO
        return choose(k % self.n + 1)

    def _choose_row(self, picked: bool) -> tuple[float, float]:
        k_pick = 1.0 - self.epsilon if picked else 0.5
        return k_pick, 1.0 - k_pick

    def _choose_reward(self, k: int, picked: bool) -> RewardDist:
        return RewardDist.gaussian(self.delta if picked else 0.0, self.sigma2 / self.kp.weights[k - 1])

    @property
    def theta(self) -> float:
        """Loop reward at the special state (regret variant)."""
        v = self.kp.values
        return (2 * sum(v) + self.kp.threshold) / (4.0 * self.cycle_length)

    # -- models -----------------------------------------------------------

    def full_model(self) -> Mdp:
        """Multi-action model: Pick or Skip at every choose state (and Loop or Cycle at zero)."""
        actions, kernel, rewards = {}, {}, {}
        if self.variant == "regret":
            actions[ZERO] = [f"{ZERO}:loop", f"{ZERO}:cycle"]
            kernel[f"{ZERO}:loop"] = {ZERO: 1.0}
            rewards[f"{ZERO}:loop"] = RewardDist.dirac(self.theta)
            kernel[f"{ZERO}:cycle"] = {choose(1): 1.0}
            rewards[f"{ZERO}:cycle"] = RewardDist.dirac(0.0)
        for k in range(1, self.n + 1):
            actions[choose(k)] = []
            for picked, name in ((True, f"{choose(k)}:pick"), (False, f"{choose(k)}:skip")):
                to_pick, to_skip = self._choose_row(picked)
                actions[choose(k)].append(name)
                kernel[name] = {pick(k): to_pick, skip(k): to_skip}
                rewards[name] = self._choose_reward(k, picked)
            self._tail(k, actions, kernel, rewards)
        return Mdp(self.states, actions, kernel, rewards)

    def _tail(self, k, actions, kernel, rewards):
        nxt = self._next_choose(k)
        for state, mean in ((pick(k), self.kp.values[k - 1]), (skip(k), 0.0)):
            name = f"{state}:go"
            actions[state] = [name]
            kernel[name] = {nxt: 1.0}
            rewards[name] = RewardDist.dirac(float(mean))

    def model_for(self, subset: Iterable[int]) -> Mdp:
        """Single-action process M_K (the regret variant keeps Loop and Cycle at zero)."""
        chosen = set(subset)
        actions, kernel, rewards = {}, {}, {}
        if self.variant == "regret":
            full = self.full_model()
            for name in (f"{ZERO}:loop", f"{ZERO}:cycle"):
                x = full.pair(name)
                actions.setdefault(ZERO, []).append(name)
                kernel[name] = {full.states[j]: p for j, p in enumerate(full.P[x]) if p > 0}
                rewards[name] = full.rewards[x]
        for k in range(1, self.n + 1):
            name = f"{choose(k)}:go"
            to_pick, to_skip = self._choose_row(k in chosen)
            actions[choose(k)] = [name]
            kernel[name] = {pick(k): to_pick, skip(k): to_skip}
            rewards[name] = self._choose_reward(k, k in chosen)
            self._tail(k, actions, kernel, rewards)
        return Mdp(self.states, actions, kernel, rewards)

    def reference_model(self) -> Mdp:
        return self.model_for(())

    def policy_for(self, subset: Iterable[int]) -> Policy:
        """pi_K on the full model."""
        chosen = set(subset)
        model = self.full_model()
        mapping = {choose(k): f"{choose(k)}:{'pick' if k in chosen else 'skip'}"
                   for k in range(1, self.n + 1)}
        for k in range(1, self.n + 1):
            mapping[pick(k)] = f"{pick(k)}:go"
            mapping[skip(k)] = f"{skip(k)}:go"
        if self.variant == "regret":
            mapping[ZERO] = f"{ZERO}:cycle"
        return Policy.deterministic(model, mapping)

    def cycle_measure(self) -> np.ndarray:
        """Expected visits per turn of the ring, on the pairs of the reference model."""
        ref = self.reference_model()
        mu = np.zeros(ref.n_pairs)
        for k in range(1, self.n + 1):
            mu[ref.pair(f"{choose(k)}:go")] = 1.0
            mu[ref.pair(f"{pick(k)}:go")] = 0.5
            mu[ref.pair(f"{skip(k)}:go")] = 0.5
        if self.variant == "regret":
            mu[ref.pair(f"{ZERO}:cycle")] = 1.0
        return mu

    def mu_empty(self) -> np.ndarray:
        """Invariant probability of the ring under the reference model."""
        return self.cycle_measure() / self.cycle_length

    # -- closed forms -----------------------------------------------------

    def subset_gain(self, subset: Iterable[int]) -> float:
        subset = tuple(subset)
        v = self.kp.values
        per_turn = (2 * sum(v) + self.kp.value_of(subset) + len(subset) / (4.0 * self.n)) / 4.0
        return per_turn / self.cycle_length

    def pair_kl(self, k: int) -> float:
        """KL of the modified choose pair of item k (kernel plus Gaussian term)."""
        kernel = 0.5 * math.log(1.0 / (4.0 * self.epsilon * (1.0 - self.epsilon)))
        return kernel + self.kp.weights[k - 1] * self.delta ** 2 / (2.0 * self.sigma2)

    def subset_info(self, subset: Iterable[int], mu=None) -> float:
        """sum_x mu(x) KL_x(M_0 || M_K) with the true KL (mu defaults to mu_empty)."""
        ref = self.reference_model()
        mu = self.mu_empty() if mu is None else np.asarray(mu, dtype=float)
        return float(sum(mu[ref.pair(f"{choose(k)}:go")] * self.pair_kl(k) for k in subset))

    def printed_subset_info(self, subset: Iterable[int]) -> float:
        """Printed per-pair expression log(1/(4e(1-e))) + w (delta/sigma)^2, weighted by mu_empty."""
        weight = 1.0 / (2.0 * (self.n if self.variant == "confusing_model" else self.n + 1))
        return float(sum(weight * (math.log(1.0 / (4 * self.epsilon * (1 - self.epsilon)))
                                   + self.kp.weights[k - 1] * (self.delta / math.sqrt(self.sigma2)) ** 2)
                         for k in subset))

    # -- thresholds -------------------------------------------------------

    def alpha(self) -> float:
        return LOG43 * (self.kp.capacity + 1.0 / 3.0)

    def beta(self) -> float:
        return (2 * sum(self.kp.values) + self.kp.threshold) / (8.0 * self.n)

    def cycle_gap(self) -> float:
        """Bellman gap of (zero, cycle) in the reference model."""
        return self.kp.threshold / 4.0

    def scale(self) -> float:
        """Multiple of the cycle measure whose information is exactly (sum w + 1/(4(n+1)))/W."""
        if self.kp.capacity < 1:
            raise PreconditionError("the regret reduction needs a capacity >= 1")
        return 1.0 / (2.0 * (self.n + 1) * LOG43 * self.kp.capacity)

    def rho(self) -> float:
        return self.scale() * self.cycle_gap()

    def printed_alpha(self) -> float:
        return 2.0 * LOG43 * (self.kp.capacity + 1.0 / 3.0)

    def printed_rho(self) -> float:
        return self.kp.threshold / (16.0 * LOG43 * self.kp.capacity)

    def printed_theta(self) -> float:
        return (2 * sum(self.kp.values) + self.kp.threshold) / (8.0 * (self.n + 1))

    # -- recovering the knapsack sums -----------------------------------

    def recover_value_sum(self, gain: float) -> int:
        return round_half_away(4.0 * self.cycle_length * gain - 2 * sum(self.kp.values))

    def recover_weight_sum(self, info: float) -> int:
        """Sum of weights from subset_info(K, mu_empty)."""
        per_weight = self.delta ** 2 / (2.0 * self.sigma2) / self.cycle_length
        return round_half_away(info / per_weight)


def build_widget_family(kp: KnapsackInstance, variant: str = "confusing_model") -> WidgetFamily:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    n = kp.n
    delta = 1.0 / (16.0 * n)
    spread = n if variant == "confusing_model" else n + 1
    sigma2 = delta ** 2 / (4.0 * spread * LOG43)
    return WidgetFamily(kp, variant, EPSILON, delta, sigma2)


def round_half_away(x) -> int:
    """Nearest integer, halves away from zero; floats within 1e-9 of a half count as halves."""
    if isinstance(x, (int, Fraction)):
        q = Fraction(x)
        base = math.floor(abs(q))
        out = base + (1 if abs(q) - base >= Fraction(1, 2) else 0)
        return int(math.copysign(out, q)) if q else 0
    a = abs(float(x))
    base = math.floor(a)
    out = base + (1 if a - base >= 0.5 - 1e-9 else 0)
    return int(out if x >= 0 else -out)


# ---------------------------------------------------------------------------
# deciders

@dataclasses.dataclass(frozen=True)
class Decision:
    answer: bool
    witness: object = None


def decide_confusing_model(fam: WidgetFamily, alpha: float | None = None,
                           beta: float | None = None) -> Decision:
    """Is there K with subset_info(K) <= alpha and subset_gain(K) >= beta?"""
    if fam.variant != "confusing_model":
        raise PreconditionError("decide_confusing_model needs the confusing_model variant")
    alpha = fam.alpha() if alpha is None else alpha
    beta = fam.beta() if beta is None else beta
    for subset in subsets(fam.n):
        if fam.subset_info(subset) <= alpha and fam.subset_gain(subset) >= beta:
            return Decision(True, subset)
    return Decision(False)


def decide_regret(fam: WidgetFamily, rho: float | None = None) -> Decision:
    """Does the largest affordable multiple of the ring measure satisfy every constraint?

    With budget rho the admissible measures are c * cycle_measure with
    c <= rho / gap; information grows with c, so c = rho / gap is checked
    against every subset whose process beats the loop.
    """
    if fam.variant != "regret":
        raise PreconditionError("decide_regret needs the regret variant")
    rho = fam.rho() if rho is None else rho
    mu = (rho / fam.cycle_gap()) * fam.cycle_measure()
    theta = fam.theta
    for subset in subsets(fam.n):
        if fam.subset_gain(subset) > theta and fam.subset_info(subset, mu) < 1.0:
            return Decision(False, subset)
    ref = fam.reference_model()
    return Decision(True, {a: float(v) for a, v in zip(ref.actions, mu)})


def check_info(fam: WidgetFamily, subset: Iterable[int]) -> float:
    """subset_info evaluated through the generic divergence code (cross-check)."""
    subset = tuple(subset)
    return info_value(fam.mu_empty(), fam.reference_model(), fam.model_for(subset))
