"""OCRS constructions: chains, sampled families, combination, greedy loop."""

import itertools
import math

import numpy as np
import pytest

from ocrs.core import ElementSubset, FractionalPoint, SeedSpec, iter_bits
from ocrs.matroids import (GraphicMatroid, MatroidView, PartitionMatroid,
                           UniformMatroid, in_scaled_matroid_polytope)
from ocrs.schemes import (ChainConstructionError, ChainDecomposition, Graph,
                          IntersectionFactory, KnapsackFactory,
                          MatchingFactory, MatroidChainFactory,
                          PolytopeMembershipError, combine_families,
                          factory_from_json, graph_from_json, knapsack_family,
                          matching_family, matroid_chain_decompose,
                          matroid_family, run_greedy_mask, run_greedy_ocrs)
from ocrs.harness import brute_force_selectability, _quantifier_selectable

K4_EDGES = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]


# ---------------------------------------------------------------------------
# chain decomposition


def test_chain_single_layer_rank_one():
    m = UniformMatroid(2, 1)
    chain = matroid_chain_decompose(m, FractionalPoint([0.25, 0.25]), 0.5)
    assert chain.levels == (0b11, 0)
    assert chain.span_estimates[0] == pytest.approx(0.25)
    assert chain.span_estimates[1] == pytest.approx(0.25)


def test_chain_zero_point():
    m = GraphicMatroid(4, K4_EDGES)
    chain = matroid_chain_decompose(m, FractionalPoint([0.0] * 6), 0.5)
    assert chain.levels == (m.ground_mask, 0)
    assert all(v == 0.0 for v in chain.span_estimates.values())


def test_chain_rank_one_never_refines():
    # span probability of each element is the other coordinate, below b
    m = UniformMatroid(2, 1)
    for b, xv in ((0.2, 0.18), (0.1, 0.09)):
        chain = matroid_chain_decompose(m, FractionalPoint([xv, xv]), b,
                                        validate_point=False)
        assert chain.levels == (0b11, 0)
        assert chain.span_estimates[0] == pytest.approx(xv)


def _theta_graph(num_paths):
    """Vertices u=0, v=1, midpoints 2..; edge 0 joins u and v directly and
    each path contributes two edges through its midpoint."""
    edges = [(0, 1)]
    for i in range(num_paths):
        mid = 2 + i
        edges.append((0, mid))
        edges.append((mid, 1))
    return GraphicMatroid(2 + num_paths, edges)


def test_chain_multi_level_refinement():
    # the direct edge is spanned by any fully active two-edge path; with
    # seven paths at the polytope boundary that probability exceeds b
    m = _theta_graph(7)
    b = 0.75
    y = (b * (m.full_rank()) - 0.01) / 14
    x = FractionalPoint([0.01] + [y] * 14)
    assert in_scaled_matroid_polytope(m, x, b)
    p_spanned = 1 - (1 - y * y) ** 7
    assert p_spanned > b
    chain = matroid_chain_decompose(m, x, b)
    assert len(chain.levels) >= 3
    assert chain.levels[1] & 1, "the direct edge must be pushed down a level"
    assert all(v <= b + 1e-9 for v in chain.span_estimates.values())
    # every element sits in exactly one layer
    assert sum(layer.bit_count() for layer in chain.layers) == 15


def test_chain_recorded_estimates_complement_selectability():
    # the recorded per-element span probability is exactly one minus the
    # element's true selectability in its layer view
    m = _theta_graph(7)
    b = 0.75
    y = (b * m.full_rank() - 0.01) / 14
    x = FractionalPoint([0.01] + [y] * 14)
    chain = matroid_chain_decompose(m, x, b)
    xv = x.values
    for layer, view in zip(chain.layers, chain.views):
        for e in iter_bits(layer):
            free = layer & ~(1 << e)
            sel = 0.0
            for t_mask in _submasks(free):
                prob = 1.0
                for g in iter_bits(free):
                    prob *= xv[g] if (t_mask >> g) & 1 else 1 - xv[g]
                if not view.spans(t_mask, e):
                    sel += prob
            assert sel == pytest.approx(1 - chain.span_estimates[e], abs=1e-12)
            assert sel >= 1 - b - 1e-9


def _submasks(mask):
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


def test_chain_monte_carlo_mode():
    m = GraphicMatroid(4, K4_EDGES)
    x = FractionalPoint([0.2] * 6)
    chain = matroid_chain_decompose(m, x, 0.5, eps=0.05, alpha=1.0,
                                    stream=SeedSpec(1).stream(0), exact=False)
    assert chain.levels == (m.ground_mask, 0)
    exact = matroid_chain_decompose(m, x, 0.5)
    for e in range(6):
        # estimates are shifted down by eps/2 and accurate to eps/2
        assert abs(chain.span_estimates[e] + 0.025
                   - exact.span_estimates[e]) <= 0.03
    assert chain.eps == 0.05 and not chain.exact


def test_chain_rejects_point_outside_polytope():
    m = UniformMatroid(3, 1)
    with pytest.raises(PolytopeMembershipError):
        matroid_chain_decompose(m, FractionalPoint([0.3, 0.3, 0.3]), 0.25)
    with pytest.raises(ChainConstructionError):
        matroid_chain_decompose(m, FractionalPoint([0.3, 0.3, 0.3]), 0.25,
                                validate_point=False)


def test_chain_validation():
    m = UniformMatroid(2, 1)
    view = MatroidView(m, 0, 0b11)
    with pytest.raises(ValueError):
        ChainDecomposition(matroid=m, levels=(0b11, 0b11, 0), views=(view,),
                           b=0.5, eps=0.0, exact=True, span_estimates={})
    with pytest.raises(ValueError):
        ChainDecomposition(matroid=m, levels=(0b01, 0), views=(view,),
                           b=0.5, eps=0.0, exact=True, span_estimates={})


# ---------------------------------------------------------------------------
# family membership and selectability


def _manual_chain(matroid, levels):
    views = tuple(MatroidView(matroid, contracted=lo, kept=hi & ~lo)
                  for hi, lo in zip(levels, levels[1:]))
    return ChainDecomposition(matroid=matroid, levels=tuple(levels),
                              views=views, b=0.5, eps=0.0, exact=True,
                              span_estimates={})


def test_matroid_family_membership():
    m = UniformMatroid(2, 1)
    fam = matroid_family(_manual_chain(m, [0b11, 0]))
    assert fam.member(0)
    assert fam.member(0b01) and fam.member(0b10)
    assert not fam.member(0b11)


def test_matroid_family_multi_layer_membership():
    # layered family: independence is judged per layer against the view
    m = UniformMatroid(4, 2)
    fam = matroid_family(_manual_chain(m, [0b1111, 0b1100, 0]))
    # layer {0,1} in (M / {2,3}): contracting two elements exhausts rank 2
    assert not fam.member(0b0001)
    # layer {2,3} restricted: plain rank-2 uniform there
    assert fam.member(0b1100)
    assert fam.member(0)


def test_selectable_matches_quantifier_exhaustive():
    """Fast selectable equals the quantifier definition on every
    (active, element) pair, for every base scheme variant, n <= 5."""
    seed = SeedSpec(42)
    cases = []

    m = GraphicMatroid(4, [(0, 1), (0, 2), (1, 2), (2, 3)])
    sampler = MatroidChainFactory(m, 0.5).bind(
        FractionalPoint([0.2, 0.2, 0.1, 0.3]))
    cases.append(sampler.enumerate_families())

    # a manual two-level chain exercises the per-layer span rule
    fam2 = matroid_family(_manual_chain(UniformMatroid(4, 2),
                                        [0b1111, 0b1100, 0]))
    cases.append([(1.0, fam2)])

    g = Graph(4, [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)])
    sampler = MatchingFactory(g, 0.4).bind(
        FractionalPoint([0.1, 0.15, 0.1, 0.05, 0.1]))
    cases.append(sampler.enumerate_families())

    sampler = KnapsackFactory([0.8, 0.5, 0.4, 0.3, 0.25], 0.25).bind(
        FractionalPoint([0.1, 0.1, 0.1, 0.1, 0.1]))
    cases.append(sampler.enumerate_families())

    for families in cases:
        for _prob, fam in families:
            n = fam.n
            for active in range(1 << n):
                fast = fam.selectable_mask(active)
                for e in range(n):
                    assert bool((fast >> e) & 1) == _quantifier_selectable(
                        fam, active, e), (fam, active, e)


def test_intersection_selectable_implies_quantifier():
    g = Graph(3, [(0, 1), (1, 2)])
    mfac = MatchingFactory(g, 0.3)
    kfac = KnapsackFactory([0.3, 0.9], 0.25)
    # conjunction under-approximates on constructed cases but never
    # over-approximates the quantifier event
    inter = IntersectionFactory([MatroidChainFactory(UniformMatroid(2, 1), 0.25),
                                 kfac])
    sampler = inter.bind(FractionalPoint([0.1, 0.1]))
    for _prob, fam in sampler.enumerate_families():
        for active in range(1 << fam.n):
            fast = fam.selectable_mask(active)
            for e in range(fam.n):
                if (fast >> e) & 1:
                    assert _quantifier_selectable(fam, active, e)


def test_family_subset_of_underlying_constraint():
    """Every member of a sampled family is feasible in the real constraint."""
    # matroid chain on K4
    m = GraphicMatroid(4, K4_EDGES)
    x = FractionalPoint([0.15] * 6)
    fam = MatroidChainFactory(m, 0.5).bind(x).sample()
    for mask in range(1 << 6):
        if fam.member(mask):
            assert m.indep(mask)
    # matching on the triangle
    g = Graph(3, [(0, 1), (1, 2), (0, 2)])
    sampler = MatchingFactory(g, 0.5).bind(FractionalPoint([0.2, 0.2, 0.2]))
    for _p, fam in sampler.enumerate_families():
        for mask in range(1 << 3):
            if fam.member(mask):
                used = set()
                ok = True
                for e in iter_bits(mask):
                    u, v = g.edges[e]
                    ok = ok and u not in used and v not in used
                    used.update((u, v))
                assert ok
    # knapsack
    sizes = [0.6, 0.3, 0.3, 0.2]
    sampler = KnapsackFactory(sizes, 0.25).bind(
        FractionalPoint([0.1, 0.2, 0.2, 0.3]))
    for _p, fam in sampler.enumerate_families():
        for mask in range(1 << 4):
            if fam.member(mask):
                assert sum(sizes[e] for e in iter_bits(mask)) <= 1 + 1e-12


def test_family_down_closed_random():
    gen = SeedSpec(7).stream(0)
    m = GraphicMatroid(4, K4_EDGES)
    fam = MatroidChainFactory(m, 0.5).bind(FractionalPoint([0.15] * 6)).sample()
    sampler = KnapsackFactory([0.6, 0.3, 0.3, 0.2, 0.1, 0.4], 0.25).bind(
        FractionalPoint([0.1] * 6))
    families = [fam] + [f for _p, f in sampler.enumerate_families()]
    for family in families:
        members = [mask for mask in range(1 << 6) if family.member(mask)]
        for _ in range(2000):
            mask = members[int(gen.integers(len(members)))]
            sub = int(gen.integers(1 << 6)) & mask
            assert family.member(sub)


# ---------------------------------------------------------------------------
# matching specifics


def test_matching_k_probability_single_edge():
    g = Graph(2, [(0, 1)])
    for b in (0.3, 1.0):
        sampler = MatchingFactory(g, b).bind(FractionalPoint([b]))
        outcomes = sampler.enumerate_families()
        p_in_k = sum(prob for prob, fam in outcomes if fam.k_mask & 1)
        assert p_in_k == pytest.approx((1 - math.exp(-b)) / b)


def test_matching_zero_coordinate_gets_k_probability_one():
    g = Graph(3, [(0, 1), (1, 2)])
    sampler = MatchingFactory(g, 0.5).bind(FractionalPoint([0.0, 0.3]))
    assert sampler.k_probs[0] == 1.0
    outcomes = sampler.enumerate_families()
    assert all(fam.k_mask & 1 for _p, fam in outcomes)
    # membership of the zero-probability singleton holds with probability one
    assert sum(p for p, fam in outcomes if fam.member(0b01)) == pytest.approx(1.0)


def test_matching_deterministic_variant():
    g = Graph(3, [(0, 1), (1, 2), (0, 2)])
    fac = MatchingFactory(g, 0.4, deterministic=True)
    assert fac.bound() == pytest.approx(0.36)
    sampler = fac.bind(FractionalPoint([0.15, 0.15, 0.1]))
    assert sampler.deterministic
    [(prob, fam)] = sampler.enumerate_families()
    assert prob == 1.0 and fam.k_mask == 0b111


def test_matching_degree_violation_rejected():
    g = Graph(3, [(0, 1), (1, 2)])
    with pytest.raises(PolytopeMembershipError):
        MatchingFactory(g, 0.4).bind(FractionalPoint([0.3, 0.2]))


def test_graph_rejects_self_loop():
    with pytest.raises(ValueError):
        Graph(2, [(0, 0)])
    with pytest.raises(ValueError):
        graph_from_json({"vertices": 2})


# ---------------------------------------------------------------------------
# knapsack specifics


def test_knapsack_p_big_formula():
    # single unit-size element at x = b = 1/2: the big mode is certain and
    # the element is always selectable
    fac = KnapsackFactory([1.0], 0.5)
    sampler = fac.bind(FractionalPoint([0.5]))
    assert sampler.p_big == pytest.approx(1.0)
    [(prob, fam)] = [o for o in sampler.enumerate_families() if o[0] > 0]
    assert fam.big_mode and prob == pytest.approx(1.0)
    assert fam.selectable_mask(0b1) == 0b1

    # same shape at b = 1/4: b_big = 1/4, so p_big = (1 - 1/2 + 1/2) / (3/2)
    sampler = KnapsackFactory([1.0], 0.25).bind(FractionalPoint([0.25]))
    assert sampler.p_big == pytest.approx(2 / 3)

    # zero point: p_big = (1-2b)/(2-2b)
    sampler = KnapsackFactory([1.0, 0.4], 0.25).bind(FractionalPoint([0, 0]))
    assert sampler.p_big == pytest.approx((1 - 0.5) / (2 - 0.5))
    for _p, fam in sampler.enumerate_families():
        assert fam.member(0)


def test_knapsack_half_size_is_small():
    fac = KnapsackFactory([0.5, 0.6], 0.25)
    assert fac.structure.big_mask == 0b10


def test_knapsack_mode_membership():
    st_sizes = [0.8, 0.6, 0.4, 0.3]
    sampler = KnapsackFactory(st_sizes, 0.25).bind(
        FractionalPoint([0.1, 0.1, 0.1, 0.1]))
    big = next(f for _p, f in sampler.enumerate_families() if f.big_mode)
    small = next(f for _p, f in sampler.enumerate_families() if not f.big_mode)
    assert big.member(0b0001) and big.member(0b0010)
    assert not big.member(0b0011)          # 0.8 + 0.6 over capacity
    assert not big.member(0b0100)          # small element in big mode
    assert small.member(0b1100) and not small.member(0b0001)


def test_knapsack_scale_validation():
    with pytest.raises(ValueError):
        KnapsackFactory([0.5], 0.75)
    with pytest.raises(PolytopeMembershipError):
        KnapsackFactory([1.0], 0.25).bind(FractionalPoint([0.5]))


# ---------------------------------------------------------------------------
# combination


def test_combine_single_identity():
    m = UniformMatroid(3, 1)
    fam = MatroidChainFactory(m, 0.5).bind(FractionalPoint([0.1] * 3)).sample()
    assert combine_families([fam]) is fam


def test_combined_selectability_disjoint_supports():
    # each part only constrains one block, so the conjunction equals the
    # binding part's selectability exactly
    m1 = PartitionMatroid([[0, 1], [2, 3]], [1, 2])
    m2 = PartitionMatroid([[0, 1], [2, 3]], [2, 1])
    b = 0.5
    x = FractionalPoint([0.2, 0.25, 0.15, 0.1])
    f1 = MatroidChainFactory(m1, b)
    f2 = MatroidChainFactory(m2, b)
    both = IntersectionFactory([f1, f2])
    exact1 = brute_force_selectability(f1, x, max_n=4)
    exact2 = brute_force_selectability(f2, x, max_n=4)
    exact12 = brute_force_selectability(both, x, max_n=4)
    assert np.allclose(exact12, np.minimum(exact1, exact2))
    assert both.bound() == pytest.approx(0.25)
    assert both.bound_expr == "(1-b) * (1-b)"


def test_intersection_requires_common_b():
    with pytest.raises(ValueError):
        IntersectionFactory([MatroidChainFactory(UniformMatroid(2, 1), 0.5),
                             KnapsackFactory([0.4, 0.4], 0.25)])


# ---------------------------------------------------------------------------
# the online loop


def test_run_greedy_basics():
    m = UniformMatroid(2, 1)
    fam = matroid_family(_manual_chain(m, [0b11, 0]))
    empty = run_greedy_ocrs(fam, [0, 1], ElementSubset.empty(2))
    assert empty.mask == 0
    both = ElementSubset.full(2)
    assert run_greedy_ocrs(fam, [0, 1], both).mask == 0b01
    assert run_greedy_ocrs(fam, [1, 0], both).mask == 0b10
    with pytest.raises(ValueError):
        run_greedy_ocrs(fam, [0, 0], both)


def test_greedy_output_contains_selectable_random():
    # over random draws, the run keeps every selectable active element
    seed = SeedSpec(13)
    m = GraphicMatroid(4, K4_EDGES)
    x = FractionalPoint([0.2] * 6)
    sampler = MatroidChainFactory(m, 0.5).bind(x)
    gen = seed.stream(0)
    fam = sampler.sample()
    for _ in range(10_000):
        active = int(gen.integers(1 << 6))
        order = list(gen.permutation(6))
        out = run_greedy_mask(fam, order, active)
        assert fam.selectable_mask(active) & active & ~out == 0
        assert fam.member(out)


def test_single_sample_family_helpers():
    g = Graph(2, [(0, 1)])
    fam = matching_family(g, FractionalPoint([0.3]), SeedSpec(1).stream(0))
    assert fam.n == 1
    det = matching_family(g, FractionalPoint([0.3]), deterministic=True)
    assert det.k_mask == 0b1
    kf = knapsack_family([0.6, 0.3], FractionalPoint([0.1, 0.1]), 0.25,
                         SeedSpec(1).stream(1))
    assert kf.member(0) and kf.n == 2


def test_factory_from_json_descriptors():
    fac = factory_from_json({"scheme": "matroid", "b": 0.5, "eps": 0.05},
                            constraints={"matroid": {"type": "uniform",
                                                     "n": 3, "k": 1}})
    assert isinstance(fac, MatroidChainFactory) and fac.b == 0.5
    fac = factory_from_json({"scheme": "matching", "b": 0.5,
                             "deterministic": True,
                             "graph": {"vertices": 2, "edges": [[0, 1]]}})
    assert isinstance(fac, MatchingFactory) and fac.deterministic
    fac = factory_from_json({"scheme": "knapsack", "b": 0.25,
                             "sizes": [0.6, 0.3]})
    assert isinstance(fac, KnapsackFactory)
    fac = factory_from_json(
        {"scheme": "intersect", "b": 0.25,
         "parts": [{"scheme": "matroid",
                    "matroid": {"type": "uniform", "n": 2, "k": 1}},
                   {"scheme": "knapsack", "sizes": [0.6, 0.3]}]})
    assert isinstance(fac, IntersectionFactory) and fac.b == 0.25
    with pytest.raises(ValueError):
        factory_from_json({"scheme": "matroid"})
    with pytest.raises(ValueError):
        factory_from_json({"scheme": "mystery", "b": 0.5})


def test_greedy_selectable_selected_under_every_order():
    # exhaustive over all arrival permutations, n = 5 knapsack variants
    sampler = KnapsackFactory([0.6, 0.3, 0.3, 0.25, 0.2], 0.25).bind(
        FractionalPoint([0.2, 0.1, 0.15, 0.1, 0.1]))
    families = [f for _p, f in sampler.enumerate_families()]
    for fam in families:
        for active in range(1 << 5):
            safe = fam.selectable_mask(active) & active
            for order in itertools.permutations(range(5)):
                out = run_greedy_mask(fam, order, active)
                assert safe & ~out == 0
