"""Submodular objectives: multilinear extension, characteristic CRS,
subsampling bounds, continuous greedy, and submodular probing.

Oracles audit submodularity (and monotonicity when claimed) exhaustively at
construction for small ground sets; the multilinear extension has an exact
mode (full 2^n sum) and a sampled mode with confidence half-widths.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (FractionalPoint, ElementSubset, SeedSpec, iter_bits,
                   pack_mask_rows, uniform_blocks)
from .harness import MeanEstimate
from .matroids import Matroid, in_scaled_matroid_polytope, max_weight_independent
from .optimize import (ConstraintSpec, LinearProgram, polytope_rows,
                       simplex_solve)
from .schemes import FeasibleFamily, GreedyOcrsFactory, run_greedy_mask

_AUDIT_LIMIT = 8
_EXACT_LIMIT = 14

_DOMAIN_TRIALS = 20
_DOMAIN_GRADIENT = 21
_DOMAIN_CONSTRUCT_IN = 22
_DOMAIN_CONSTRUCT_OUT = 23


class SubmodularOracle:
    """Nonnegative set function with an audited submodularity certificate."""

    def __init__(self, n: int, fn: Callable[[int], float], kind: str,
                 monotone: bool, validate: bool = True):
        self.n = n
        self._fn = fn
        self.kind = kind
        self.monotone = monotone
        self._table: Optional[np.ndarray] = None
        if validate and n <= _AUDIT_LIMIT:
            self._audit()

    def value(self, mask: int) -> float:
        if self._table is not None:
            return float(self._table[mask])
        return self._fn(mask)

    def table(self) -> np.ndarray:
        if self._table is None:
            if self.n > _EXACT_LIMIT + 2:
                raise ValueError("full value table too large")
            self._table = np.array([self._fn(mask)
                                    for mask in range(1 << self.n)])
        return self._table

    def _audit(self) -> None:
        tab = self.table()
        if np.any(tab < -1e-9):
            raise ValueError("function must be nonnegative")
        total = 1 << self.n
        for a in range(total):
            for e in range(self.n):
                bit = 1 << e
                if a & bit:
                    continue
                if self.monotone and tab[a | bit] < tab[a] - 1e-9:
                    raise ValueError("function is not monotone")
        idx = np.arange(total)
        a_grid = idx[:, None]
        b_grid = idx[None, :]
        lhs = tab[a_grid] + tab[b_grid]
        rhs = tab[a_grid | b_grid] + tab[a_grid & b_grid]
        if np.any(lhs < rhs - 1e-9):
            raise ValueError("function is not submodular")


def coverage_function(universe_weights: Sequence[float],
                      covers: Sequence[Sequence[int]],
                      validate: bool = True) -> SubmodularOracle:
    """Weighted coverage: value of the union of the chosen elements' sets."""
    weights = np.asarray(universe_weights, dtype=float)
    if np.any(weights < 0):
        raise ValueError("universe weights must be nonnegative")
    cover_masks = []
    for s in covers:
        m = 0
        for u in s:
            if not 0 <= u < weights.size:
                raise ValueError("covered item outside the universe")
            m |= 1 << u
        cover_masks.append(m)

    def fn(mask: int) -> float:
        covered = 0
        for e in iter_bits(mask):
            covered |= cover_masks[e]
        return float(sum(weights[u] for u in iter_bits(covered)))

    return SubmodularOracle(len(cover_masks), fn, "coverage", monotone=True,
                            validate=validate)


def weighted_matroid_rank(matroid: Matroid, weights: Sequence[float],
                          validate: bool = True) -> SubmodularOracle:
    """f(S) = maximum weight of an independent subset of S."""
    w = [float(v) for v in weights]
    if any(v < 0 for v in w):
        raise ValueError("weights must be nonnegative")

    def fn(mask: int) -> float:
        order = sorted(iter_bits(mask), key=lambda e: (-w[e], e))
        kept = 0
        total = 0.0
        for e in order:
            if matroid.indep(kept | (1 << e)):
                kept |= 1 << e
                total += w[e]
        return total

    return SubmodularOracle(matroid.n, fn, "weighted-matroid-rank",
                            monotone=True, validate=validate)


def directed_cut(num_nodes: int, arcs: Sequence[tuple[int, int, float]],
                 validate: bool = True) -> SubmodularOracle:
    """f(S) = total weight of arcs from S to its complement (non-monotone)."""
    for u, v, w in arcs:
        if not (0 <= u < num_nodes and 0 <= v < num_nodes) or w < 0:
            raise ValueError("arcs need valid endpoints and nonneg weights")

    def fn(mask: int) -> float:
        return float(sum(w for u, v, w in arcs
                         if (mask >> u) & 1 and not (mask >> v) & 1))

    return SubmodularOracle(num_nodes, fn, "directed-cut", monotone=False,
                            validate=validate)


def submodular_from_json(obj: dict) -> SubmodularOracle:
    if isinstance(obj, dict) and "universe_weights" in obj and "covers" in obj:
        return coverage_function(obj["universe_weights"], obj["covers"])
    if isinstance(obj, dict) and "arcs" in obj:
        arcs = [(int(u), int(v), float(w)) for u, v, w in obj["arcs"]]
        nodes = obj.get("nodes", 1 + max((max(u, v) for u, v, _ in arcs),
                                         default=0))
        return directed_cut(int(nodes), arcs)
    raise ValueError("unrecognized submodular function descriptor")


# ---------------------------------------------------------------------------
# multilinear extension


@dataclass(frozen=True)
class MultilinearEvaluator:
    """Exact (full 2^n sum, n <= 14) or sampled evaluation policy."""

    mode: str = "exact"
    trials: int = 10000
    seed: SeedSpec = SeedSpec(0)

    def __post_init__(self) -> None:
        if self.mode not in ("exact", "sampled"):
            raise ValueError("mode must be 'exact' or 'sampled'")


def _inclusion_probs(x: np.ndarray) -> np.ndarray:
    """prob[mask] of R(x) = mask, bit e of mask tracking element e."""
    probs = np.ones(1)
    for e in range(x.size):
        probs = np.concatenate([probs * (1.0 - x[e]), probs * x[e]])
    return probs


def multilinear_exact(f: SubmodularOracle, x: FractionalPoint) -> float:
    """F(x) = E[f(R(x))] by the full weighted sum over subsets."""
    if f.n > _EXACT_LIMIT:
        raise ValueError("exact multilinear evaluation limited to 14 elements")
    return float(np.dot(_inclusion_probs(x.values), f.table()))


def multilinear_sampled(f: SubmodularOracle, x: FractionalPoint, trials: int,
                        seed: SeedSpec) -> MeanEstimate:
    total = 0.0
    total_sq = 0.0
    for _start, block in uniform_blocks(seed, _DOMAIN_TRIALS, trials, x.n):
        for mask in pack_mask_rows(block < x.values).tolist():
            v = f.value(mask)
            total += v
            total_sq += v * v
    return MeanEstimate.from_moments(total, total_sq, trials)


def multilinear_F(f: SubmodularOracle, x: FractionalPoint,
                  evaluator: MultilinearEvaluator = MultilinearEvaluator()
                  ) -> MeanEstimate:
    if evaluator.mode == "exact":
        return MeanEstimate(mean=multilinear_exact(f, x), halfwidth=0.0,
                            trials=0)
    return multilinear_sampled(f, x, evaluator.trials, evaluator.seed)


# ---------------------------------------------------------------------------
# characteristic CRS and the subsampling bounds


def characteristic_crs(family: FeasibleFamily,
                       active: ElementSubset) -> ElementSubset:
    """Active elements addable to every family member inside the active set.

    Always a subset of what the greedy online loop selects, under every
    arrival order.
    """
    return ElementSubset(family.selectable_mask(active.mask) & active.mask,
                         family.n)


def ocrs_submodular_value(f: SubmodularOracle, factory: GreedyOcrsFactory,
                          x: FractionalPoint, trials: int, seed: SeedSpec,
                          order: Optional[Sequence[int]] = None) -> MeanEstimate:
    """Mean f(S) over greedy OCRS runs; monotone objectives only."""
    if not f.monotone:
        raise ValueError("non-monotone objectives use half_subsample_value")
    return _ocrs_value_loop(f, factory, x, trials, seed, order,
                            half_subsample=False)


def half_subsample_value(f: SubmodularOracle, factory: GreedyOcrsFactory,
                         x: FractionalPoint, trials: int, seed: SeedSpec,
                         order: Optional[Sequence[int]] = None) -> MeanEstimate:
    """Mean f over a coin-thinned copy of the OCRS output (rate one half)."""
    return _ocrs_value_loop(f, factory, x, trials, seed, order,
                            half_subsample=True)


def _ocrs_value_loop(f: SubmodularOracle, factory: GreedyOcrsFactory,
                     x: FractionalPoint, trials: int, seed: SeedSpec,
                     order: Optional[Sequence[int]],
                     half_subsample: bool) -> MeanEstimate:
    n = x.n
    sampler = factory.bind(x, seed.stream(_DOMAIN_CONSTRUCT_OUT))
    use_order = tuple(order) if order is not None else tuple(range(n))
    width = n + sampler.draw_count + (n if half_subsample else 0)
    total = 0.0
    total_sq = 0.0
    for _start, block in uniform_blocks(seed, _DOMAIN_TRIALS, trials, width):
        actives = pack_mask_rows(block[:, :n] < x.values)
        families = sampler.sample_block(block[:, n:n + sampler.draw_count])
        for i, (a, fam) in enumerate(zip(actives.tolist(), families)):
            selected = run_greedy_mask(fam, use_order, a)
            if half_subsample:
                coins = block[i, n + sampler.draw_count:]
                kept = 0
                for e in iter_bits(selected):
                    if coins[e] < 0.5:
                        kept |= 1 << e
                v = f.value(kept)
            else:
                v = f.value(selected)
            total += v
            total_sq += v * v
    return MeanEstimate.from_moments(total, total_sq, trials)


# ---------------------------------------------------------------------------
# continuous greedy


def _exact_marginals(f: SubmodularOracle, x: np.ndarray) -> np.ndarray:
    """Partial derivatives of the extension: E[f(S + e) - f(S)] with S drawn
    from R(x) restricted away from e.  (The raise-to-one marginal equals
    this scaled by 1 - x_e; either drives the ascent to the same bound.)"""
    tab = f.table()
    n = x.size
    gains = np.zeros(n)
    idx = np.arange(1 << n)
    for e in range(n):
        bit = 1 << e
        xx = x.copy()
        xx[e] = 0.0
        probs = _inclusion_probs(xx)
        gains[e] = float(np.dot(probs, tab[idx | bit] - tab[idx]))
    return gains


def _sampled_marginals(f: SubmodularOracle, x: np.ndarray, samples: int,
                       gen: np.random.Generator) -> np.ndarray:
    n = x.size
    gains = np.zeros(n)
    draws = gen.random((samples, n))
    masks = pack_mask_rows(draws < x)
    for e in range(n):
        bit = 1 << e
        acc = 0.0
        for m in masks.tolist():
            base = m & ~bit
            acc += f.value(base | bit) - f.value(base)
        gains[e] = acc / samples
    return gains


def continuous_greedy(f: SubmodularOracle, matroid: Matroid, b: float,
                      steps_per_unit: int = 100,
                      gradient_samples: int = 500,
                      stream: Optional[np.random.Generator] = None,
                      exact_gradients: Optional[bool] = None) -> FractionalPoint:
    """Ascent toward max F over the matroid polytope, stopped at time b.

    Each step adds delta times the indicator of a maximum-gain independent
    set; after k steps the point is a scaled convex combination of vertices,
    so membership in b * P holds by construction and is asserted.
    """
    if not f.monotone:
        raise ValueError("continuous greedy needs a monotone objective")
    if not 0.0 <= b <= 1.0:
        raise ValueError("stop time must lie in [0, 1]")
    n = matroid.n
    x = np.zeros(n)
    if b == 0.0:
        return FractionalPoint(x).with_validated_scale(0.0)
    use_exact = (exact_gradients if exact_gradients is not None
                 else f.n <= _EXACT_LIMIT)
    if not use_exact and stream is None:
        raise ValueError("sampled gradients need a stream")
    steps = max(1, round(b * steps_per_unit))
    counts = np.zeros(n)

    def point() -> np.ndarray:
        # b * (counts / steps) keeps every coordinate at most b exactly;
        # the average of <= steps vertex indicators stays inside b * P
        return b * (counts / steps)

    for _ in range(steps):
        x = point()
        if use_exact:
            gains = _exact_marginals(f, x)
        else:
            gains = _sampled_marginals(f, x, gradient_samples, stream)
        direction = max_weight_independent(matroid, gains)
        for e in iter_bits(direction):
            counts[e] += 1
        if matroid.size() <= 12:
            assert in_scaled_matroid_polytope(matroid, FractionalPoint(point()), b), \
                "continuous greedy stepped outside b * P"
    return FractionalPoint(point()).with_validated_scale(b)


# ---------------------------------------------------------------------------
# submodular probing


@dataclass
class SubmodularProbingResult:
    x_tilde: FractionalPoint
    estimate: MeanEstimate
    multilinear_benchmark: float
    scheme_constant: float
    bound_expr: str

    @property
    def target(self) -> float:
        return self.scheme_constant * self.multilinear_benchmark


def _direction_lp(gains: np.ndarray, p: Sequence[float],
                  inner: ConstraintSpec, outer: ConstraintSpec) -> np.ndarray:
    n = gains.size
    pf = [Fraction(float(v)) for v in p]
    ones = [Fraction(1)] * n
    rows = polytope_rows(inner, pf, n) + polytope_rows(outer, ones, n)
    for e in range(n):
        unit = [Fraction(0)] * n
        unit[e] = Fraction(1)
        rows.append((unit, Fraction(1)))
    objective = [Fraction(float(max(g, 0.0))) for g in gains]
    lp = LinearProgram(objective=objective, rows=[r for r, _ in rows],
                       rhs=[rhs for _, rhs in rows])
    _value, solution = simplex_solve(lp)
    return np.array([float(v) for v in solution])


def continuous_greedy_probing(f: SubmodularOracle, p: Sequence[float],
                              inner: ConstraintSpec, outer: ConstraintSpec,
                              b: float, steps_per_unit: int = 100) -> FractionalPoint:
    """Continuous greedy on F(p o x) over the probing feasible region.

    Directions are vertices of {x : p o x in P_in, x in P_out, x in [0,1]}
    found by the exact simplex, so after stopping at time b the point
    satisfies p o x in b*P_in and x in b*P_out simultaneously.
    """
    if not f.monotone:
        raise ValueError("submodular probing needs a monotone objective")
    n = f.n
    pv = np.asarray(p, dtype=float)
    x = np.zeros(n)
    if b == 0.0:
        return FractionalPoint(x).with_validated_scale(0.0)
    steps = max(1, round(b * steps_per_unit))
    vertex_sum = np.zeros(n)
    for _ in range(steps):
        x = np.minimum(b * (vertex_sum / steps), 1.0)
        gains = _exact_marginals(f, pv * x) * pv
        direction = _direction_lp(gains, p, inner, outer)
        vertex_sum += direction
    x = np.minimum(b * (vertex_sum / steps), 1.0)
    point = FractionalPoint(x)
    _assert_scaled_membership(FractionalPoint(pv * x), inner, b)
    _assert_scaled_membership(point, outer, b)
    return point.with_validated_scale(b)


def _assert_scaled_membership(y: FractionalPoint, spec: ConstraintSpec,
                              b: float) -> None:
    if isinstance(spec, Matroid):
        if spec.size() <= 12:
            assert in_scaled_matroid_polytope(spec, y, b), \
                "point left the scaled polytope"
    else:
        load = sum(s * v for s, v in zip(spec.sizes, y.values))
        assert load <= b + 1e-9, "point left the scaled knapsack"


def run_submodular_probing(f: SubmodularOracle, p: Sequence[float],
                           inner: ConstraintSpec, outer: ConstraintSpec,
                           b: float, trials: int, seed: SeedSpec,
                           inner_factory: Optional[GreedyOcrsFactory] = None,
                           outer_factory: Optional[GreedyOcrsFactory] = None,
                           steps_per_unit: int = 100,
                           order: Optional[Sequence[int]] = None) -> SubmodularProbingResult:
    """Continuous greedy then online probing; compares E[f(S)] to the
    product of the scheme constants times F(p o x~)."""
    from .applications import default_factory  # local to avoid cycle

    n = f.n
    if len(p) != n:
        raise ValueError("one activation probability per element required")
    x_tilde = continuous_greedy_probing(f, p, inner, outer, b,
                                        steps_per_unit=steps_per_unit)
    inner_factory = inner_factory or default_factory(inner, b)
    outer_factory = outer_factory or default_factory(outer, b)
    pv = np.asarray(p, dtype=float)
    inner_point = FractionalPoint(pv * x_tilde.values)
    inner_sampler = inner_factory.bind(inner_point,
                                       seed.stream(_DOMAIN_CONSTRUCT_IN))
    outer_sampler = outer_factory.bind(x_tilde,
                                       seed.stream(_DOMAIN_CONSTRUCT_OUT))
    use_order = tuple(order) if order is not None else tuple(range(n))
    k_in = inner_sampler.draw_count
    width = 2 * n + k_in + outer_sampler.draw_count
    in_member = (inner.indep if isinstance(inner, Matroid) else inner.member)
    out_member = (outer.indep if isinstance(outer, Matroid) else outer.member)
    total = 0.0
    total_sq = 0.0
    for _start, block in uniform_blocks(seed, _DOMAIN_TRIALS, trials, width):
        a_outs = pack_mask_rows(block[:, :n] < x_tilde.values)
        acts = pack_mask_rows(block[:, n:2 * n] < pv)
        fams_in = inner_sampler.sample_block(block[:, 2 * n:2 * n + k_in])
        fams_out = outer_sampler.sample_block(block[:, 2 * n + k_in:])
        for a_out, act, fin, fout in zip(a_outs.tolist(), acts.tolist(),
                                         fams_in, fams_out):
            probed = 0
            selected = 0
            for e in use_order:
                bit = 1 << e
                if (a_out & bit and fin.member(selected | bit)
                        and fout.member(probed | bit)):
                    probed |= bit
                    if act & bit:
                        selected |= bit
            if selected != probed & act:
                raise AssertionError("selection must be the active probes")
            if not (in_member(selected) and out_member(probed)):
                raise AssertionError("probing produced an infeasible set")
            v = f.value(selected)
            total += v
            total_sq += v * v
    constant = inner_factory.bound() * outer_factory.bound()
    expr = (f"({inner_factory.bound_expr}) * ({outer_factory.bound_expr})")
    return SubmodularProbingResult(
        x_tilde=x_tilde,
        estimate=MeanEstimate.from_moments(total, total_sq, trials),
        multilinear_benchmark=multilinear_exact(f, inner_point),
        scheme_constant=constant,
        bound_expr=expr)
