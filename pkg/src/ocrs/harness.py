"""Statistical verification of selectability bounds and exact tiny oracles.

Selectability estimates carry two-sided 99% confidence half-widths
(z = 2.576).  Brute-force counterparts enumerate the activation and
family-sampling outcome spaces exactly on tiny instances, so Monte-Carlo
results can be audited against numbers computed by an independent path.
"""

from __future__ import annotations

import csv
import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (FractionalPoint, SeedSpec, iter_bits, iter_submasks,
                   pack_mask_rows, uniform_blocks)
from .schemes import FeasibleFamily, GreedyOcrsFactory, run_greedy_mask

Z_99 = 2.576

_DOMAIN_CONSTRUCT = 0
_DOMAIN_TRIALS = 1


def ci_halfwidth(p_hat: float, trials: int) -> float:
    """Two-sided 99% normal-approximation half-width."""
    return Z_99 * math.sqrt(max(p_hat * (1.0 - p_hat), 0.0) / trials)


@dataclass(frozen=True)
class MeanEstimate:
    """Sample mean with a 99% normal-approximation half-width."""

    mean: float
    halfwidth: float
    trials: int

    @classmethod
    def from_moments(cls, total: float, total_sq: float,
                     trials: int) -> "MeanEstimate":
        mean = total / trials
        var = max(total_sq / trials - mean * mean, 0.0)
        return cls(mean=mean, halfwidth=Z_99 * math.sqrt(var / trials),
                   trials=trials)

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "MeanEstimate":
        arr = np.asarray(values, dtype=float)
        return cls.from_moments(float(arr.sum()), float(np.dot(arr, arr)),
                                arr.size)


@dataclass
class SelectabilityReport:
    """Per-element selectability estimates against a claimed bound."""

    estimates: np.ndarray
    halfwidths: np.ndarray
    trials: int
    bound: float
    bound_expr: str
    construction_slack: float
    scheme: str = ""
    b: float = float("nan")
    seed: Optional[int] = None
    passes: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.passes = (self.estimates + self.halfwidths
                       + self.construction_slack >= self.bound - 1e-15)

    @property
    def n(self) -> int:
        return int(self.estimates.size)

    def all_pass(self) -> bool:
        return bool(np.all(self.passes))

    def rows(self) -> list[dict]:
        return [{"element": e,
                 "estimate": float(self.estimates[e]),
                 "ci_halfwidth": float(self.halfwidths[e]),
                 "bound": self.bound,
                 "pass": bool(self.passes[e])}
                for e in range(self.n)]

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["element", "estimate", "ci_halfwidth",
                                "bound", "pass"])
            writer.writeheader()
            for row in self.rows():
                writer.writerow(row)

    def to_json_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "b": self.b,
            "trials": self.trials,
            "seed": self.seed,
            "bound": self.bound,
            "bound_expr": self.bound_expr,
            "construction_slack": self.construction_slack,
            "elements": self.rows(),
            "all_pass": self.all_pass(),
        }


def selectability_counts(factory: GreedyOcrsFactory, x: FractionalPoint,
                         trials: int, seed: SeedSpec,
                         block_range: Optional[tuple[int, int]] = None
                         ) -> Counter:
    """Counts of selectable-element bitmasks over a range of trial blocks.

    The counts for disjoint block ranges sum to the full-range counts, so
    workers can split ranges without changing the reduced result.
    """
    sampler = factory.bind(x, seed.stream(_DOMAIN_CONSTRUCT))
    n = x.n
    xv = x.values
    width = n + sampler.draw_count
    counts: Counter[int] = Counter()
    if sampler.deterministic:
        family = sampler.sample()
        for _start, block in uniform_blocks(seed, _DOMAIN_TRIALS, trials,
                                            width, block_range):
            actives = pack_mask_rows(block[:, :n] < xv)
            for a in actives.tolist():
                counts[family.selectable_mask(a)] += 1
    else:
        memo: dict[tuple, int] = {}
        for _start, block in uniform_blocks(seed, _DOMAIN_TRIALS, trials,
                                            width, block_range):
            actives = pack_mask_rows(block[:, :n] < xv)
            families = sampler.sample_block(block[:, n:])
            for a, fam in zip(actives.tolist(), families):
                key = (fam.cache_key(), a)
                mask = memo.get(key)
                if mask is None:
                    mask = fam.selectable_mask(a)
                    memo[key] = mask
                counts[mask] += 1
    return counts


def report_from_counts(counts: Counter, trials: int,
                       factory: GreedyOcrsFactory, n: int,
                       seed: SeedSpec, scheme: str = "") -> SelectabilityReport:
    freq = np.zeros(n)
    for mask, c in counts.items():
        for e in iter_bits(mask):
            freq[e] += c
    estimates = freq / trials
    halfwidths = np.array([ci_halfwidth(p, trials) for p in estimates])
    return SelectabilityReport(estimates=estimates, halfwidths=halfwidths,
                               trials=trials, bound=factory.bound(),
                               bound_expr=factory.bound_expr,
                               construction_slack=factory.construction_slack,
                               scheme=scheme, b=factory.b,
                               seed=seed.master_seed)


def estimate_selectability(factory: GreedyOcrsFactory, x: FractionalPoint,
                           trials: int, seed: SeedSpec,
                           scheme: str = "") -> SelectabilityReport:
    """Monte-Carlo frequency of the per-element order-free selectable event.

    Per trial, the active set R(x) and one family F_x are sampled and every
    element's `selectable` indicator recorded; trial randomness is derived
    in fixed blocks from the seed, so worker layout cannot change results.
    """
    if trials < 1:
        raise ValueError("at least one trial required")
    counts = selectability_counts(factory, x, trials, seed)
    return report_from_counts(counts, trials, factory, x.n, seed, scheme)


def _quantifier_selectable(family: FeasibleFamily, active_mask: int,
                           e: int) -> bool:
    """Literal check: every family member inside the active set stays a
    member after adding e.  Uses only membership queries."""
    bit = 1 << e
    for i_mask in iter_submasks(active_mask & ~bit):
        if family.member(i_mask) and not family.member(i_mask | bit):
            return False
    return True


def brute_force_selectability(factory: GreedyOcrsFactory, x: FractionalPoint,
                              max_n: int = 5) -> np.ndarray:
    """Exact per-element selectability by enumerating all outcomes.

    Sums over every activation outcome and every family outcome, weighting
    by product probabilities; the selectable event is evaluated by the
    quantifier definition over membership queries only, independently of
    the schemes' fast rules.
    """
    n = x.n
    if n > max_n:
        raise ValueError("brute force limited to tiny ground sets")
    sampler = factory.bind(x)
    outcomes = sampler.enumerate_families()
    xv = x.values
    result = np.zeros(n)
    for active in range(1 << n):
        p_active = 1.0
        for e in range(n):
            p_active *= xv[e] if (active >> e) & 1 else 1.0 - xv[e]
        if p_active == 0.0:
            continue
        for fam_prob, family in outcomes:
            weight = p_active * fam_prob
            for e in range(n):
                if _quantifier_selectable(family, active, e):
                    result[e] += weight
    return result


# ---------------------------------------------------------------------------
# deterministic knapsack impossibility


def _down_closed(family: frozenset[int]) -> bool:
    return all(sub in family
               for mask in family for sub in iter_submasks(mask))


def knapsack_deterministic_impossibility(
        n: int, b: Fraction) -> tuple[Fraction, list[int]]:
    """Best min-element selectability over all deterministic subfamilies.

    Instance: n - 1 items of size 1/n plus one item of size 1, with
    x = (b, ..., b, b/n).  Enumerates every down-closed subfamily of the
    knapsack-feasible sets that contains all singletons, computes each
    element's exact selectability, and returns the maximum over families of
    the per-family minimum, with a witnessing family.  Everything is exact
    rational arithmetic; the result equals (1-b)^(n-1).
    """
    if n < 1 or n > 4:
        raise ValueError("family enumeration is doubly exponential; n <= 4")
    b = Fraction(b)
    if not 0 <= b <= 1:
        raise ValueError("b must lie in [0, 1]")
    sizes = [Fraction(1, n)] * (n - 1) + [Fraction(1)]
    x = [b] * (n - 1) + [b / n]

    feasible = [mask for mask in range(1 << n)
                if sum(sizes[e] for e in iter_bits(mask)) <= 1]
    base = {0} | {1 << e for e in range(n)}
    if not base <= set(feasible):
        raise AssertionError("singletons must be feasible")
    optional = [m for m in feasible if m not in base]

    activation = []
    for active in range(1 << n):
        p = Fraction(1)
        for e in range(n):
            p *= x[e] if (active >> e) & 1 else 1 - x[e]
        activation.append(p)

    best = Fraction(-1)
    witness: list[int] = []
    for picks in range(1 << len(optional)):
        family = frozenset(base | {optional[i] for i in range(len(optional))
                                   if (picks >> i) & 1})
        if not _down_closed(family):
            continue
        worst = Fraction(2)
        for e in range(n):
            bit = 1 << e
            prob = Fraction(0)
            for active in range(1 << n):
                if activation[active] == 0:
                    continue
                ok = True
                for i_mask in iter_submasks(active & ~bit):
                    if i_mask in family and (i_mask | bit) not in family:
                        ok = False
                        break
                if ok:
                    prob += activation[active]
            worst = min(worst, prob)
        if worst > best:
            best = worst
            witness = sorted(family)
    return best, witness


# ---------------------------------------------------------------------------
# adversarial order search


@dataclass
class AdversarySearchResult:
    """Worst arrival order found and its estimated expected value."""

    worst_order: tuple[int, ...]
    worst_value: float
    mode: str
    values_by_order: dict[tuple[int, ...], float]


def worst_order_value(prepare_trial: Callable[[int], object],
                      trial_value: Callable[[object, Sequence[int]], float],
                      n: int, trials: int,
                      mode: str = "exhaustive",
                      restarts: int = 8,
                      seed: Optional[SeedSpec] = None) -> AdversarySearchResult:
    """Minimize the estimated expected value over arrival permutations.

    Common random numbers: each trial's state is prepared once (indexed by
    trial number) and reused for every permutation, so order comparisons are
    free of sampling noise.  Exhaustive mode enumerates all n! orders
    (n <= 8); the heuristic mode hill-climbs over adjacent transpositions.
    """
    states = [prepare_trial(t) for t in range(trials)]

    def mean_value(order: Sequence[int]) -> float:
        return sum(trial_value(s, order) for s in states) / trials

    values: dict[tuple[int, ...], float] = {}
    if mode == "exhaustive":
        if n > 8:
            raise ValueError("exhaustive order search limited to n <= 8")
        for perm in itertools.permutations(range(n)):
            values[perm] = mean_value(perm)
        worst = min(values, key=lambda p: (values[p], p))
        return AdversarySearchResult(worst, values[worst], "exhaustive", values)
    if mode != "greedy-heuristic":
        raise ValueError("mode must be 'exhaustive' or 'greedy-heuristic'")
    gen = (seed or SeedSpec(0)).stream(2)
    best_perm: Optional[tuple[int, ...]] = None
    for _ in range(restarts):
        perm = [int(v) for v in gen.permutation(n)]
        current = mean_value(perm)
        improved = True
        while improved:
            improved = False
            for i in range(n - 1):
                perm[i], perm[i + 1] = perm[i + 1], perm[i]
                candidate = mean_value(perm)
                if candidate < current - 1e-15:
                    current = candidate
                    improved = True
                else:
                    perm[i], perm[i + 1] = perm[i + 1], perm[i]
        key = tuple(perm)
        values[key] = current
        if best_perm is None or current < values[best_perm]:
            best_perm = key
    assert best_perm is not None
    return AdversarySearchResult(best_perm, values[best_perm],
                                 "greedy-heuristic", values)


def ocrs_trial_value_fn(weights: Sequence[float]):
    """Value function for OCRS adversary search trials.

    The trial state is a pair (family, active_mask); the value of an order
    is the weight of the greedy selection.  Also asserts the order-free
    selectable containment: every selectable active element is selected
    under every order.
    """
    w = np.asarray(weights, dtype=float)

    def value(state, order) -> float:
        family, active_mask = state
        selected = run_greedy_mask(family, order, active_mask)
        guaranteed = family.selectable_mask(active_mask) & active_mask
        if guaranteed & ~selected:
            raise AssertionError(
                "greedy run dropped an element whose selectable event held")
        return float(sum(w[e] for e in iter_bits(selected)))

    return value
