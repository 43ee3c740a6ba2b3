"""Greedy OCRS constructions: sampled feasible subfamilies and the online loop.

Each scheme is a factory that, bound to a fractional point x in b*P, yields
one down-closed feasible subfamily per trial (deterministic factories reuse
a single family).  Families answer membership and a fast per-element
`selectable` query; the online loop selects an arriving active element iff
adding it keeps the selected set in the subfamily.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import ElementSubset, FractionalPoint, iter_bits, iter_submasks, pack_mask
from .matroids import (EXHAUSTIVE_LIMIT, Matroid, MatroidView,
                       in_scaled_matroid_polytope)

#: Above this many elements in a level, chain span probabilities switch from
#: exact enumeration to Monte-Carlo estimation.
EXACT_SPAN_LIMIT = 20

#: Monte-Carlo sample count per span-probability estimate is
#: ceil(SAMPLE_CONSTANT * (2 ln 2 + 2 (3 + alpha) ln n) / eps^2), the
#: Hoeffding bound for a one-sided estimate landing in [p - eps, p] with
#: failure probability n^-(3+alpha).
SAMPLE_CONSTANT = 1.0

_TOL = 1e-9


class SchemeError(ValueError):
    """Base class for scheme construction failures."""


class PolytopeMembershipError(SchemeError):
    """The supplied point is outside the scaled relaxation polytope."""


class ChainConstructionError(SchemeError):
    """Chain refinement failed to shrink a level (bad point or estimates)."""


# ---------------------------------------------------------------------------
# feasible subfamilies


class FeasibleFamily:
    """One sampled instantiation of a greedy OCRS subfamily F_x."""

    n: int

    def member(self, mask: int) -> bool:
        raise NotImplementedError

    def selectable_mask(self, active_mask: int) -> int:
        """Bitmask of elements e with: I + e in F_x for every I in F_x,
        I a subset of the active set (the per-element order-free event)."""
        raise NotImplementedError

    def selectable(self, active: ElementSubset, e: int) -> bool:
        return bool((self.selectable_mask(active.mask) >> e) & 1)

    def cache_key(self):
        """Hashable identity of the sampled instance (for memoized trials)."""
        raise NotImplementedError


@dataclass(frozen=True)
class ChainDecomposition:
    """Nested level sets N_0 > N_1 > ... > N_l = 0 with per-level views.

    ``views[i]`` is the base matroid with N_{i+1} contracted, restricted to
    the layer N_i - N_{i+1}.  ``span_estimates[e]`` records the final
    (exact or Monte-Carlo) span probability that fixed e's layer; each is
    at most b by construction.
    """

    matroid: Matroid
    levels: tuple[int, ...]
    views: tuple[MatroidView, ...]
    b: float
    eps: float
    exact: bool
    span_estimates: dict[int, float] = field(repr=False)

    def __post_init__(self) -> None:
        levels = self.levels
        if levels[0] != self.matroid.ground_mask or levels[-1] != 0:
            raise ValueError("chain must run from the ground set to empty")
        for hi, lo in zip(levels, levels[1:]):
            if lo & ~hi or lo == hi:
                raise ValueError("chain levels must be strictly nested")

    @property
    def layers(self) -> tuple[int, ...]:
        return tuple(hi & ~lo for hi, lo in zip(self.levels, self.levels[1:]))


class MatroidChainFamily(FeasibleFamily):
    """Per-layer independence in the chain's contracted/restricted views."""

    def __init__(self, chain: ChainDecomposition):
        self.chain = chain
        self.n = chain.matroid.n
        self._layers = list(zip(chain.layers, chain.views))
        self._selectable_cache: dict[int, int] = {}

    def member(self, mask: int) -> bool:
        if mask & ~self.chain.matroid.ground_mask:
            return False
        return all(view.indep(mask & layer) for layer, view in self._layers)

    def selectable_mask(self, active_mask: int) -> int:
        cached = self._selectable_cache.get(active_mask)
        if cached is None:
            cached = 0
            for layer, view in self._layers:
                present = active_mask & layer
                for e in iter_bits(layer):
                    if not view.spans(present & ~(1 << e), e):
                        cached |= 1 << e
            self._selectable_cache[active_mask] = cached
        return cached

    def cache_key(self):
        return ("chain", id(self.chain))


class _MatchingStructure:
    """Shared per-graph data: adjacency masks and matching memo."""

    def __init__(self, graph: "Graph"):
        self.graph = graph
        self._matching_cache: dict[int, bool] = {}

    def is_matching(self, mask: int) -> bool:
        cached = self._matching_cache.get(mask)
        if cached is None:
            used = 0
            cached = True
            for e in iter_bits(mask):
                u, v = self.graph.edges[e]
                if (used >> u & 1) or (used >> v & 1):
                    cached = False
                    break
                used |= (1 << u) | (1 << v)
            self._matching_cache[mask] = cached
        return cached


class MatchingFamily(FeasibleFamily):
    """Subsets of the sampled edge set K that form a matching."""

    def __init__(self, structure: _MatchingStructure, k_mask: int):
        self.structure = structure
        self.k_mask = k_mask
        self.n = structure.graph.n_edges

    def member(self, mask: int) -> bool:
        if mask & ~self.k_mask:
            return False
        return self.structure.is_matching(mask)

    def selectable_mask(self, active_mask: int) -> int:
        adj = self.structure.graph.adjacent_edges
        blockers = active_mask & self.k_mask
        out = 0
        for e in iter_bits(self.k_mask):
            if not blockers & adj[e]:
                out |= 1 << e
        return out

    def cache_key(self):
        return ("matching", self.k_mask)


class _KnapsackStructure:
    """Shared per-instance data: sizes, the big-element set and sum memos."""

    def __init__(self, sizes: Sequence[float]):
        arr = tuple(float(s) for s in sizes)
        if any(s < 0 or s > 1 for s in arr):
            raise ValueError("sizes must lie in [0, 1]")
        self.sizes = arr
        self.n = len(arr)
        # strictly greater than one half: items of size exactly 1/2 are small
        self.big_mask = pack_mask(np.array([s > 0.5 for s in arr]))
        self._sum_cache: dict[int, float] = {0: 0.0}
        self._best_cache: dict[int, float] = {}
        self._selectable_cache: dict[tuple[bool, int], int] = {}

    def size_sum(self, mask: int) -> float:
        cached = self._sum_cache.get(mask)
        if cached is None:
            low = mask & -mask
            cached = self.size_sum(mask ^ low) + self.sizes[low.bit_length() - 1]
            self._sum_cache[mask] = cached
        return cached

    def best_feasible_sum(self, mask: int) -> float:
        """Largest subset-sum of ``mask`` not exceeding the unit capacity."""
        cached = self._best_cache.get(mask)
        if cached is None:
            cached = 0.0
            for sub in iter_submasks(mask):
                s = self.size_sum(sub)
                if s <= 1.0 + _TOL and s > cached:
                    cached = s
            self._best_cache[mask] = cached
        return cached


class KnapsackFamily(FeasibleFamily):
    """Big-only or small-only subsets respecting the unit capacity."""

    def __init__(self, structure: _KnapsackStructure, big_mode: bool):
        self.structure = structure
        self.big_mode = big_mode
        self.n = structure.n

    def member(self, mask: int) -> bool:
        st = self.structure
        if self.big_mode:
            if mask & ~st.big_mask:
                return False
        elif mask & st.big_mask:
            return False
        return st.size_sum(mask) <= 1.0 + _TOL

    def selectable_mask(self, active_mask: int) -> int:
        st = self.structure
        cached = st._selectable_cache.get((self.big_mode, active_mask))
        if cached is not None:
            return cached
        out = 0
        if self.big_mode:
            pool = active_mask & st.big_mask
            for e in iter_bits(st.big_mask):
                others = pool & ~(1 << e)
                # feasible subsets of big elements are empty or singletons
                worst = max((st.sizes[g] for g in iter_bits(others)), default=0.0)
                if worst + st.sizes[e] <= 1.0 + _TOL:
                    out |= 1 << e
        else:
            small_mask = ((1 << st.n) - 1) & ~st.big_mask
            pool = active_mask & small_mask
            for e in iter_bits(small_mask):
                worst = st.best_feasible_sum(pool & ~(1 << e))
                if worst + st.sizes[e] <= 1.0 + _TOL:
                    out |= 1 << e
        st._selectable_cache[(self.big_mode, active_mask)] = out
        return out

    def cache_key(self):
        return ("knapsack", self.big_mode)


class IntersectionFamily(FeasibleFamily):
    """Conjunction of member and selectable over the component families.

    The conjunction of per-part selectable events implies (and may be
    strictly stronger than) the quantifier event for the intersection, and
    is the event whose probability the combination bound c1*c2 controls.
    """

    def __init__(self, parts: Sequence[FeasibleFamily]):
        if not parts:
            raise ValueError("at least one family required")
        if len({f.n for f in parts}) != 1:
            raise ValueError("families must share the ground set")
        self.parts = tuple(parts)
        self.n = parts[0].n

    def member(self, mask: int) -> bool:
        return all(f.member(mask) for f in self.parts)

    def selectable_mask(self, active_mask: int) -> int:
        out = self.parts[0].selectable_mask(active_mask)
        for f in self.parts[1:]:
            if not out:
                break
            out &= f.selectable_mask(active_mask)
        return out

    def cache_key(self):
        return ("intersect",) + tuple(f.cache_key() for f in self.parts)


def combine_families(families: Sequence[FeasibleFamily]) -> FeasibleFamily:
    """Intersection family over a common ground set."""
    if len(families) == 1:
        return families[0]
    return IntersectionFamily(families)


def run_greedy_ocrs(family: FeasibleFamily, order: Sequence[int],
                    active: ElementSubset) -> ElementSubset:
    """Scan ``order``; select an active element iff the selection stays in F_x."""
    if sorted(order) != list(range(family.n)):
        raise ValueError("order must be a permutation of the ground set")
    return ElementSubset(run_greedy_mask(family, order, active.mask), family.n)


def run_greedy_mask(family: FeasibleFamily, order: Sequence[int],
                    active_mask: int) -> int:
    selected = 0
    for e in order:
        bit = 1 << e
        if active_mask & bit and family.member(selected | bit):
            selected |= bit
    return selected


# ---------------------------------------------------------------------------
# matroid chain construction


def _mc_sample_count(n: int, eps: float, alpha: float) -> int:
    n = max(n, 2)
    return int(math.ceil(SAMPLE_CONSTANT
                         * (2 * math.log(2) + 2 * (3 + alpha) * math.log(n))
                         / (eps * eps)))


def _exact_span_probability(view: Matroid, x: np.ndarray, level_mask: int,
                            s_mask: int, e: int) -> float:
    """Pr[e in span((R(x) | S) - e)] with R restricted to the level, exactly."""
    free = level_mask & ~s_mask & ~(1 << e)
    free_list = list(iter_bits(free))
    total = 0.0
    for t_mask in iter_submasks(free):
        prob = 1.0
        for g in free_list:
            prob *= x[g] if (t_mask >> g) & 1 else 1.0 - x[g]
        if prob == 0.0:
            continue
        if view.spans(t_mask | s_mask, e):
            total += prob
    return total


def _mc_span_probability(view: Matroid, x: np.ndarray, level_mask: int,
                         s_mask: int, e: int, samples: int, eps: float,
                         gen: np.random.Generator) -> float:
    """One-sided Monte-Carlo estimate targeted into [p - eps, p]."""
    free_list = [g for g in iter_bits(level_mask & ~s_mask) if g != e]
    if not free_list:
        return 1.0 - eps / 2 if view.spans(s_mask, e) else -eps / 2
    probs = x[free_list]
    draws = gen.random((samples, len(free_list))) < probs
    powers = np.array([1 << g for g in free_list], dtype=object)
    masks = draws @ powers
    hits = 0
    seen: dict[int, bool] = {}
    for m in masks:
        key = int(m)
        val = seen.get(key)
        if val is None:
            val = view.spans(key | s_mask, e)
            seen[key] = val
        hits += val
    return hits / samples - eps / 2


def matroid_chain_decompose(matroid: Matroid, x: FractionalPoint, b: float,
                            eps: float = 0.05, alpha: float = 1.0,
                            stream: Optional[np.random.Generator] = None,
                            exact: Optional[bool] = None,
                            validate_point: bool = True) -> ChainDecomposition:
    """Build the nested level sets whose per-layer span probabilities are <= b.

    Levels are refined by repeatedly absorbing every element whose
    probability of being spanned by the other active elements (plus the
    already-absorbed set) exceeds b.  Exact enumeration is used up to
    EXACT_SPAN_LIMIT elements per level; above that, Monte-Carlo estimates
    with _mc_sample_count samples each (requires ``stream``).
    """
    if not 0.0 <= b <= 1.0:
        raise ValueError("b must lie in [0, 1]")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if x.n != matroid.n:
        raise ValueError("point dimension must match the matroid")
    size = matroid.size()
    use_exact = exact if exact is not None else size <= EXACT_SPAN_LIMIT
    if not use_exact and stream is None:
        raise ValueError("Monte-Carlo chain construction needs a stream")
    if validate_point and size <= EXHAUSTIVE_LIMIT:
        if not in_scaled_matroid_polytope(matroid, x, b):
            raise PolytopeMembershipError(
                "x is outside b * P for the given matroid")
    xv = x.values
    samples = _mc_sample_count(size, eps, alpha)

    levels = [matroid.ground_mask]
    estimates: dict[int, float] = {}
    current = matroid.ground_mask
    while current:
        if len(levels) > size + 1:
            raise ChainConstructionError("level cap exceeded")
        level_view = MatroidView(matroid, 0, current)

        def estimate(e: int, s_mask: int) -> float:
            if use_exact:
                return _exact_span_probability(level_view, xv, current,
                                               s_mask, e)
            return _mc_span_probability(level_view, xv, current, s_mask, e,
                                        samples, eps, stream)

        s_mask = 0
        while True:
            sweep: dict[int, float] = {}
            added = 0
            for e in iter_bits(current & ~s_mask):
                p_hat = estimate(e, s_mask)
                # strict comparison, at the same numerical tolerance that the
                # polytope membership check admits boundary points with
                if p_hat > b + _TOL:
                    added |= 1 << e
                    s_mask |= 1 << e
                else:
                    sweep[e] = p_hat
            if not added:
                break
        if s_mask == current:
            raise ChainConstructionError(
                "refinement absorbed a whole level; x is outside b * P or "
                "the span estimates failed")
        estimates.update(sweep)
        levels.append(s_mask)
        current = s_mask

    views = tuple(MatroidView(matroid, contracted=lo, kept=hi & ~lo)
                  for hi, lo in zip(levels, levels[1:]))
    return ChainDecomposition(matroid=matroid, levels=tuple(levels),
                              views=views, b=b,
                              eps=0.0 if use_exact else eps,
                              exact=use_exact, span_estimates=estimates)


def matroid_family(chain: ChainDecomposition) -> MatroidChainFamily:
    """The greedy OCRS subfamily induced by a chain decomposition."""
    return MatroidChainFamily(chain)


def matching_family(graph: "Graph", x: FractionalPoint,
                    stream: Optional[np.random.Generator] = None,
                    b: Optional[float] = None,
                    deterministic: bool = False) -> MatchingFamily:
    """One sampled matching subfamily for the point x.

    The scale defaults to the largest per-vertex load of x, i.e. the
    smallest b with x in b * P.
    """
    scale = b if b is not None else float(
        max(graph.degree_loads(x.values).max(), 0.0))
    sampler = MatchingFactory(graph, min(scale, 1.0),
                              deterministic=deterministic).bind(x)
    return sampler.sample(stream)


def knapsack_family(sizes: Sequence[float], x: FractionalPoint, b: float,
                    stream: Optional[np.random.Generator] = None) -> KnapsackFamily:
    """One sampled knapsack subfamily (big or small mode) for the point x."""
    return KnapsackFactory(sizes, b).bind(x).sample(stream)


# ---------------------------------------------------------------------------
# graphs for the matching scheme


class Graph:
    """Undirected multigraph; the scheme's ground set is the edge list."""

    def __init__(self, num_vertices: int, edges: Sequence[tuple[int, int]]):
        self.num_vertices = num_vertices
        self.edges = tuple((int(u), int(v)) for u, v in edges)
        for u, v in self.edges:
            if not (0 <= u < num_vertices and 0 <= v < num_vertices):
                raise ValueError("edge endpoint outside vertex range")
            if u == v:
                raise ValueError("self-loops are not allowed")
        self.n_edges = len(self.edges)
        incident = [0] * num_vertices
        for idx, (u, v) in enumerate(self.edges):
            incident[u] |= 1 << idx
            incident[v] |= 1 << idx
        self.incident_edges = tuple(incident)
        self.adjacent_edges = tuple(
            (incident[u] | incident[v]) & ~(1 << idx)
            for idx, (u, v) in enumerate(self.edges))

    def degree_loads(self, x: np.ndarray) -> np.ndarray:
        loads = np.zeros(self.num_vertices)
        for idx, (u, v) in enumerate(self.edges):
            loads[u] += x[idx]
            loads[v] += x[idx]
        return loads


def graph_from_json(obj: dict) -> Graph:
    if not isinstance(obj, dict) or "vertices" not in obj or "edges" not in obj:
        raise ValueError("graph descriptor needs 'vertices' and 'edges'")
    return Graph(int(obj["vertices"]), [tuple(e) for e in obj["edges"]])


# ---------------------------------------------------------------------------
# samplers and factories


class SchemeSampler:
    """Per-trial family sampler for one bound point x."""

    draw_count: int = 0
    deterministic: bool = True

    def sample_from_row(self, row: np.ndarray) -> FeasibleFamily:
        raise NotImplementedError

    def sample(self, gen: Optional[np.random.Generator] = None) -> FeasibleFamily:
        if self.draw_count == 0:
            return self.sample_from_row(np.empty(0))
        if gen is None:
            raise ValueError("randomized sampler needs a generator")
        return self.sample_from_row(gen.random(self.draw_count))

    def sample_block(self, rows: np.ndarray) -> list[FeasibleFamily]:
        """One family per row of a (trials, draw_count) uniform table."""
        if self.draw_count == 0:
            fam = self.sample_from_row(np.empty(0))
            return [fam] * rows.shape[0]
        return [self.sample_from_row(rows[i]) for i in range(rows.shape[0])]

    def enumerate_families(self) -> list[tuple[float, FeasibleFamily]]:
        """All (probability, family) outcomes; for brute-force oracles."""
        raise NotImplementedError


class _ChainSampler(SchemeSampler):
    def __init__(self, family: MatroidChainFamily):
        self.family = family
        self.draw_count = 0
        self.deterministic = True

    def sample_from_row(self, row: np.ndarray) -> FeasibleFamily:
        return self.family

    def enumerate_families(self):
        return [(1.0, self.family)]


class _MatchingSampler(SchemeSampler):
    def __init__(self, structure: _MatchingStructure, k_probs: np.ndarray,
                 deterministic: bool):
        self.structure = structure
        self.k_probs = k_probs
        self.deterministic = deterministic
        self.draw_count = 0 if deterministic else structure.graph.n_edges
        self._full = (1 << structure.graph.n_edges) - 1

    def sample_from_row(self, row: np.ndarray) -> FeasibleFamily:
        if self.deterministic:
            return MatchingFamily(self.structure, self._full)
        return MatchingFamily(self.structure, pack_mask(row < self.k_probs))

    def sample_block(self, rows: np.ndarray) -> list[FeasibleFamily]:
        if self.deterministic:
            fam = MatchingFamily(self.structure, self._full)
            return [fam] * rows.shape[0]
        from .core import pack_mask_rows
        masks = pack_mask_rows(rows < self.k_probs)
        return [MatchingFamily(self.structure, int(k)) for k in masks]

    def enumerate_families(self):
        if self.deterministic:
            return [(1.0, MatchingFamily(self.structure, self._full))]
        m = self.structure.graph.n_edges
        if m > 16:
            raise ValueError("edge-set outcome space too large to enumerate")
        out = []
        for k_mask in range(1 << m):
            prob = 1.0
            for g in range(m):
                pg = self.k_probs[g]
                prob *= pg if (k_mask >> g) & 1 else 1.0 - pg
            if prob > 0.0:
                out.append((prob, MatchingFamily(self.structure, k_mask)))
        return out


class _KnapsackSampler(SchemeSampler):
    def __init__(self, structure: _KnapsackStructure, p_big: float):
        self.structure = structure
        self.p_big = p_big
        self.draw_count = 1
        self.deterministic = False
        self._big = KnapsackFamily(structure, True)
        self._small = KnapsackFamily(structure, False)

    def sample_from_row(self, row: np.ndarray) -> FeasibleFamily:
        return self._big if row[0] < self.p_big else self._small

    def sample_block(self, rows: np.ndarray) -> list[FeasibleFamily]:
        return [self._big if u else self._small
                for u in rows[:, 0] < self.p_big]

    def enumerate_families(self):
        out = []
        if self.p_big > 0.0:
            out.append((self.p_big, self._big))
        if self.p_big < 1.0:
            out.append((1.0 - self.p_big, self._small))
        return out


class _IntersectionSampler(SchemeSampler):
    def __init__(self, parts: Sequence[SchemeSampler]):
        self.parts = tuple(parts)
        self.draw_count = sum(p.draw_count for p in parts)
        self.deterministic = all(p.deterministic for p in parts)

    def sample_from_row(self, row: np.ndarray) -> FeasibleFamily:
        families = []
        at = 0
        for p in self.parts:
            families.append(p.sample_from_row(row[at:at + p.draw_count]))
            at += p.draw_count
        return combine_families(families)

    def sample_block(self, rows: np.ndarray) -> list[FeasibleFamily]:
        columns = []
        at = 0
        for p in self.parts:
            columns.append(p.sample_block(rows[:, at:at + p.draw_count]))
            at += p.draw_count
        return [combine_families(list(group)) for group in zip(*columns)]

    def enumerate_families(self):
        outcomes = [(1.0, [])]
        for p in self.parts:
            nxt = []
            for prob, fams in outcomes:
                for q, fam in p.enumerate_families():
                    nxt.append((prob * q, fams + [fam]))
            outcomes = nxt
        return [(prob, combine_families(fams)) for prob, fams in outcomes]


class GreedyOcrsFactory:
    """Scheme description bound to a scale b; `bind` attaches a point x."""

    b: float
    bound_expr: str
    construction_slack: float = 0.0

    def bound(self) -> float:
        """The proven selectability constant for points in b * P."""
        raise NotImplementedError

    def bind(self, x: FractionalPoint,
             stream: Optional[np.random.Generator] = None) -> SchemeSampler:
        raise NotImplementedError


class MatroidChainFactory(GreedyOcrsFactory):
    bound_expr = "1-b"

    def __init__(self, matroid: Matroid, b: float, eps: float = 0.05,
                 alpha: float = 1.0, exact: Optional[bool] = None):
        self.matroid = matroid
        self.b = b
        self.eps = eps
        self.alpha = alpha
        self.exact = exact if exact is not None else matroid.size() <= EXACT_SPAN_LIMIT
        self.construction_slack = 0.0 if self.exact else eps

    def bound(self) -> float:
        return 1.0 - self.b

    def bind(self, x, stream=None) -> SchemeSampler:
        chain = matroid_chain_decompose(self.matroid, x, self.b, eps=self.eps,
                                        alpha=self.alpha, stream=stream,
                                        exact=self.exact)
        return _ChainSampler(matroid_family(chain))


class MatchingFactory(GreedyOcrsFactory):
    def __init__(self, graph: Graph, b: float, deterministic: bool = False):
        if not 0.0 <= b <= 1.0:
            raise SchemeError("matching scheme requires b in [0, 1]")
        self.graph = graph
        self.b = b
        self.deterministic = deterministic
        self.bound_expr = "(1-b)^2" if deterministic else "exp(-2b)"

    def bound(self) -> float:
        if self.deterministic:
            return (1.0 - self.b) ** 2
        return math.exp(-2.0 * self.b)

    def bind(self, x, stream=None) -> SchemeSampler:
        if x.n != self.graph.n_edges:
            raise ValueError("point dimension must match the edge count")
        loads = self.graph.degree_loads(x.values)
        if np.any(loads > self.b + _TOL):
            raise PolytopeMembershipError(
                "x violates the scaled per-vertex degree bounds")
        with np.errstate(invalid="ignore"):
            k_probs = np.where(x.values > 0,
                               -np.expm1(-x.values) / np.where(x.values > 0,
                                                               x.values, 1.0),
                               1.0)
        return _MatchingSampler(_MatchingStructure(self.graph), k_probs,
                                self.deterministic)


class KnapsackFactory(GreedyOcrsFactory):
    bound_expr = "(1-2b)/(2-2b)"

    def __init__(self, sizes: Sequence[float], b: float):
        if not 0.0 <= b <= 0.5:
            raise SchemeError("knapsack scheme requires b in [0, 1/2]")
        self.structure = _KnapsackStructure(sizes)
        self.b = b

    def bound(self) -> float:
        return (1.0 - 2.0 * self.b) / (2.0 - 2.0 * self.b)

    def bind(self, x, stream=None) -> SchemeSampler:
        st = self.structure
        if x.n != st.n:
            raise ValueError("point dimension must match the size vector")
        occupancy = float(np.dot(np.array(st.sizes), x.values))
        if occupancy > self.b + _TOL:
            raise PolytopeMembershipError(
                "x violates the scaled knapsack capacity")
        b_big = float(sum(st.sizes[e] * x.values[e]
                          for e in iter_bits(st.big_mask)))
        p_big = (1.0 - 2.0 * self.b + 2.0 * b_big) / (2.0 - 2.0 * self.b)
        return _KnapsackSampler(st, min(max(p_big, 0.0), 1.0))


class IntersectionFactory(GreedyOcrsFactory):
    def __init__(self, parts: Sequence[GreedyOcrsFactory]):
        if not parts:
            raise ValueError("at least one factory required")
        if len({p.b for p in parts}) != 1:
            raise SchemeError("combined schemes must share the scale b")
        self.parts = tuple(parts)
        self.b = parts[0].b
        self.bound_expr = " * ".join(f"({p.bound_expr})" for p in parts)
        self.construction_slack = sum(p.construction_slack for p in parts)

    def bound(self) -> float:
        return math.prod(p.bound() for p in self.parts)

    def bind(self, x, stream=None) -> SchemeSampler:
        return _IntersectionSampler([p.bind(x, stream) for p in self.parts])


def factory_from_json(obj: dict, constraints: Optional[dict] = None,
                      default_b: Optional[float] = None,
                      default_eps: float = 0.05) -> GreedyOcrsFactory:
    """Build a scheme factory from its JSON descriptor.

    Descriptors carry the scheme kind, scale and scheme-specific data, e.g.
    ``{"scheme": "knapsack", "b": 0.25, "sizes": [...]}``.  Matroid and
    matching descriptors take their constraint either inline (``matroid`` /
    ``graph`` fields) or from the ``constraints`` context object.
    """
    from .matroids import matroid_from_json

    if not isinstance(obj, dict) or "scheme" not in obj:
        raise ValueError("scheme descriptor must be an object with 'scheme'")
    context = constraints or {}
    kind = obj["scheme"]
    b = obj.get("b", default_b)
    if b is None:
        raise ValueError("scheme descriptor needs a scale 'b'")
    if kind == "matroid":
        source = obj.get("matroid", context.get("matroid"))
        if source is None:
            raise ValueError("matroid scheme needs a 'matroid' descriptor")
        return MatroidChainFactory(matroid_from_json(source), float(b),
                                   eps=float(obj.get("eps", default_eps)))
    if kind == "matching":
        source = obj.get("graph", context.get("graph"))
        if source is None:
            raise ValueError("matching scheme needs a 'graph' descriptor")
        return MatchingFactory(graph_from_json(source), float(b),
                               deterministic=bool(obj.get("deterministic",
                                                          False)))
    if kind == "knapsack":
        if "sizes" not in obj:
            raise ValueError("knapsack scheme needs 'sizes'")
        return KnapsackFactory(obj["sizes"], float(b))
    if kind == "intersect":
        parts = obj.get("parts")
        if not parts:
            raise ValueError("intersect scheme needs nonempty 'parts'")
        return IntersectionFactory(
            [factory_from_json(part, constraints=context, default_b=b,
                               default_eps=default_eps) for part in parts])
    raise ValueError(f"unknown scheme kind {kind!r}")
