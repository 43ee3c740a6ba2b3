"""End-to-end pipelines: prophet selection, stochastic probing, deadlines.

Each pipeline solves its relaxation, converts the fractional optimum into
activation thresholds or probing probabilities, and plays a greedy OCRS
online; feasibility of every produced set is asserted on every run.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .core import (ElementSubset, FractionalPoint, SeedSpec, iter_bits,
                   pack_mask_rows, scale_point, uniform_blocks)
from .harness import (AdversarySearchResult, MeanEstimate, worst_order_value)
from .matroids import LaminarMatroid, Matroid, max_weight_independent
from .optimize import (ConstraintSpec, DiscreteDistribution,
                       KnapsackConstraint, ProbingLpResult, constraint_member,
                       solve_probing_lp, solve_prophet_relaxation, threshold)
from .schemes import (FeasibleFamily, GreedyOcrsFactory, IntersectionFactory,
                      KnapsackFactory, MatroidChainFactory, SchemeSampler,
                      run_greedy_mask)

_DOMAIN_CONSTRUCT_OUT = 10
_DOMAIN_CONSTRUCT_IN = 11
_DOMAIN_TRIALS = 12


def default_factory(spec: ConstraintSpec, b: float,
                    eps: float = 0.05) -> GreedyOcrsFactory:
    """The scheme this library pairs with a constraint family by default."""
    if isinstance(spec, Matroid):
        return MatroidChainFactory(spec, b, eps=eps)
    if isinstance(spec, KnapsackConstraint):
        return KnapsackFactory(spec.sizes, b)
    raise TypeError(f"no default scheme for {type(spec).__name__}")


# ---------------------------------------------------------------------------
# prophet pipeline


@dataclass(frozen=True)
class ProphetInstance:
    """Matroid constraint plus one finite value distribution per element.

    ``arrival_order`` names the evaluation policy: "worst" (search all
    permutations), "identity", or a fixed permutation tuple.
    """

    matroid: Matroid
    dists: tuple[DiscreteDistribution, ...]
    arrival_order: str | tuple[int, ...] = "worst"

    def __post_init__(self) -> None:
        if len(self.dists) != self.matroid.n:
            raise ValueError("one distribution per element required")
        for d in self.dists:
            if d.min_value < 0:
                raise ValueError("prophet values must be nonnegative")
        if not isinstance(self.arrival_order, str):
            if sorted(self.arrival_order) != list(range(self.matroid.n)):
                raise ValueError("fixed arrival order must be a permutation")
        elif self.arrival_order not in ("worst", "identity"):
            raise ValueError("arrival_order must be 'worst', 'identity' or "
                             "a permutation")

    @property
    def n(self) -> int:
        return self.matroid.n


def prophet_thresholds(instance: ProphetInstance,
                       x: FractionalPoint) -> list[tuple[float, float]]:
    """Per-element (threshold value, tie-activation probability).

    Element e becomes active when its realization exceeds the threshold, or
    equals it and an independent coin with the tie probability succeeds; the
    resulting activation probability is exactly x_e.
    """
    out = []
    for e in range(instance.n):
        d = instance.dists[e]
        xe = x[e]
        if xe <= 0.0:
            out.append((d.max_value, 0.0))
            continue
        q = threshold(d, xe)
        atom = d.prob_of(q)
        tie = (xe - 1.0 + d.cdf(q)) / atom if atom > 0 else 0.0
        out.append((q, min(max(tie, 0.0), 1.0)))
    return out


@dataclass
class ProphetPipeline:
    """Relaxation point, thresholds and a bound scheme sampler for one run."""

    instance: ProphetInstance
    factory: GreedyOcrsFactory
    x: FractionalPoint
    relaxation_value: float
    thresholds: list[tuple[float, float]]
    sampler: SchemeSampler
    b: float

    @property
    def draw_width(self) -> int:
        # per trial: value quantile, tie coin, and downsampling coin per
        # element, then the family draws
        return 3 * self.instance.n + self.sampler.draw_count


def prepare_prophet(instance: ProphetInstance, factory: GreedyOcrsFactory,
                    seed: SeedSpec) -> ProphetPipeline:
    """Solve the relaxation and bind the scheme to the downscaled point.

    The scheme sees b*x, and trials keep each active element only with
    probability b, so a (b, c)-selectable scheme yields per-element
    selection probability at least b*c*x_e on the unscaled instance.
    """
    x, value = solve_prophet_relaxation(instance.matroid, instance.dists)
    sampler = factory.bind(scale_point(x, factory.b),
                           seed.stream(_DOMAIN_CONSTRUCT_OUT))
    return ProphetPipeline(instance=instance, factory=factory, x=x,
                           relaxation_value=value,
                           thresholds=prophet_thresholds(instance, x),
                           sampler=sampler, b=factory.b)


def _prophet_trial_from_row(pipeline: ProphetPipeline,
                            row: np.ndarray) -> tuple[FeasibleFamily, int, list[float]]:
    n = pipeline.instance.n
    z = [pipeline.instance.dists[e].quantile(row[e]) for e in range(n)]
    active = 0
    for e in range(n):
        q, tie = pipeline.thresholds[e]
        if pipeline.x[e] <= 0.0:
            continue
        if z[e] > q or (z[e] == q and row[n + e] < tie):
            if row[2 * n + e] < pipeline.b:
                active |= 1 << e
    family = pipeline.sampler.sample_from_row(row[3 * n:])
    return family, active, z


def run_prophet(pipeline: ProphetPipeline, order: Sequence[int],
                gen: np.random.Generator) -> tuple[ElementSubset, float]:
    """One online run: draw values, activate, play the greedy OCRS."""
    row = gen.random(pipeline.draw_width)
    family, active, z = _prophet_trial_from_row(pipeline, row)
    selected = run_greedy_mask(family, order, active)
    if not pipeline.instance.matroid.indep(selected):
        raise AssertionError("prophet selection violated the matroid")
    return (ElementSubset(selected, pipeline.instance.n),
            float(sum(z[e] for e in iter_bits(selected))))


def prophet_trial_states(pipeline: ProphetPipeline, trials: int,
                         seed: SeedSpec) -> list[tuple[FeasibleFamily, int, list[float]]]:
    """Fixed per-trial randomness for common-random-number order search."""
    states = []
    for _start, block in uniform_blocks(seed, _DOMAIN_TRIALS, trials,
                                        pipeline.draw_width):
        for i in range(block.shape[0]):
            states.append(_prophet_trial_from_row(pipeline, block[i]))
    return states


def prophet_value_under_order(pipeline: ProphetPipeline, states,
                              order: Sequence[int]) -> MeanEstimate:
    matroid = pipeline.instance.matroid
    total = 0.0
    total_sq = 0.0
    for family, active, z in states:
        selected = run_greedy_mask(family, order, active)
        if not matroid.indep(selected):
            raise AssertionError("prophet selection violated the matroid")
        guaranteed = family.selectable_mask(active) & active
        if guaranteed & ~selected:
            raise AssertionError("selectable active element was not selected")
        v = sum(z[e] for e in iter_bits(selected))
        total += v
        total_sq += v * v
    return MeanEstimate.from_moments(total, total_sq, len(states))


def prophet_worst_order(pipeline: ProphetPipeline, trials: int,
                        seed: SeedSpec,
                        mode: str = "exhaustive") -> tuple[AdversarySearchResult, MeanEstimate]:
    """Worst arrival order over common random numbers, plus its mean value."""
    states = prophet_trial_states(pipeline, trials, seed)
    matroid = pipeline.instance.matroid

    def trial_value(state, order) -> float:
        family, active, z = state
        selected = run_greedy_mask(family, order, active)
        if not matroid.indep(selected):
            raise AssertionError("prophet selection violated the matroid")
        return sum(z[e] for e in iter_bits(selected))

    result = worst_order_value(lambda t: states[t], trial_value,
                               pipeline.instance.n, trials, mode=mode,
                               seed=seed)
    estimate = prophet_value_under_order(pipeline, states, result.worst_order)
    return result, estimate


def brute_force_prophet_opt(instance: ProphetInstance,
                            max_scenarios: int = 10 ** 6) -> float:
    """Exact E[max-weight independent set] over the product distribution."""
    scenarios = 1
    for d in instance.dists:
        scenarios *= len(d.support)
        if scenarios > max_scenarios:
            raise ValueError("joint support too large to enumerate")
    n = instance.n
    total = 0.0
    stack = [(0, 1.0, [0.0] * n)]
    while stack:
        e, prob, values = stack.pop()
        if e == n:
            best = max_weight_independent(instance.matroid, values)
            total += prob * sum(values[g] for g in iter_bits(best))
            continue
        for v, pr in zip(instance.dists[e].support, instance.dists[e].probs):
            nxt = list(values)
            nxt[e] = v
            stack.append((e + 1, prob * pr, nxt))
    return total


# ---------------------------------------------------------------------------
# stochastic probing


@dataclass(frozen=True)
class ProbingInstance:
    """Activation probabilities, weights, inner/outer families, scale b."""

    p: tuple[float, ...]
    w: tuple[float, ...]
    inner: ConstraintSpec
    outer: ConstraintSpec
    b: float
    deadlines: Optional[tuple[int, ...]] = None

    def __post_init__(self) -> None:
        n = len(self.p)
        if len(self.w) != n:
            raise ValueError("weights and probabilities must share the length")
        if any(not 0.0 <= v <= 1.0 for v in self.p):
            raise ValueError("activation probabilities must lie in [0, 1]")
        if any(v < 0 for v in self.w):
            raise ValueError("weights must be nonnegative")
        if self.deadlines is not None:
            if len(self.deadlines) != n:
                raise ValueError("one deadline per element required")
            if any(not 1 <= d <= n for d in self.deadlines):
                raise ValueError("deadlines must lie in 1..n")

    @property
    def n(self) -> int:
        return len(self.p)


def deadline_matroid(deadlines: Sequence[int], n: int) -> LaminarMatroid:
    """Laminar matroid of deadline-respecting probe sets: at most d elements
    with deadline at most d, for every d."""
    sets = []
    caps = []
    for d in sorted(set(deadlines)):
        members = [e for e in range(n) if deadlines[e] <= d]
        if len(members) > d:
            sets.append(members)
            caps.append(d)
    if not sets:
        # vacuous constraints; a free matroid keeps the scheme machinery uniform
        sets = [list(range(n))]
        caps = [n]
    return LaminarMatroid(n, sets, caps)


@dataclass
class ProbingPipeline:
    instance: ProbingInstance
    lp: ProbingLpResult
    inner_factory: GreedyOcrsFactory
    outer_factory: GreedyOcrsFactory
    inner_sampler: SchemeSampler
    outer_sampler: SchemeSampler
    order: tuple[int, ...]
    bound: float
    bound_expr: str
    outer_point: FractionalPoint
    inner_point: FractionalPoint
    laminar: Optional[LaminarMatroid] = None

    @property
    def draw_width(self) -> int:
        return (2 * self.instance.n + self.inner_sampler.draw_count
                + self.outer_sampler.draw_count)


def prepare_probing(instance: ProbingInstance, seed: SeedSpec,
                    inner_factory: Optional[GreedyOcrsFactory] = None,
                    outer_factory: Optional[GreedyOcrsFactory] = None,
                    order: Optional[Sequence[int]] = None) -> ProbingPipeline:
    """Solve the probing LP and bind inner/outer schemes per the algorithm.

    The outer scheme is bound to b*x*, the inner scheme to p o (b*x*).  With
    deadlines, the laminar deadline matroid is intersected into the outer
    scheme, its rank rows join the LP, the probe order becomes ascending
    deadlines (ties by index), and the guarantee picks up the extra (1-b).
    """
    b = instance.b
    n = instance.n
    inner_factory = inner_factory or default_factory(instance.inner, b)
    outer_factory = outer_factory or default_factory(instance.outer, b)
    if not (inner_factory.b == outer_factory.b == b):
        raise ValueError("factories must use the instance scale b")
    laminar = None
    extra = None
    bound = b * inner_factory.bound() * outer_factory.bound()
    bound_expr = (f"b * ({inner_factory.bound_expr}) * "
                  f"({outer_factory.bound_expr})")
    if instance.deadlines is not None:
        laminar = deadline_matroid(instance.deadlines, n)
        extra = laminar
        deadline_factory = MatroidChainFactory(laminar, b)
        bound *= deadline_factory.bound()
        bound_expr = (f"b * (1-b) * ({inner_factory.bound_expr}) * "
                      f"({outer_factory.bound_expr})")
        outer_factory = IntersectionFactory([outer_factory, deadline_factory])
        if order is not None:
            raise ValueError("deadline instances fix their own probe order")
        order = sorted(range(n), key=lambda e: (instance.deadlines[e], e))
    lp = solve_probing_lp(instance.p, instance.w, instance.inner,
                          instance.outer, extra_outer=extra)
    outer_point = scale_point(lp.x, b)
    inner_point = FractionalPoint(np.asarray(instance.p) * outer_point.values)
    inner_sampler = inner_factory.bind(inner_point,
                                       seed.stream(_DOMAIN_CONSTRUCT_IN))
    outer_sampler = outer_factory.bind(outer_point,
                                       seed.stream(_DOMAIN_CONSTRUCT_OUT))
    if order is None:
        order = range(n)
    return ProbingPipeline(instance=instance, lp=lp,
                           inner_factory=inner_factory,
                           outer_factory=outer_factory,
                           inner_sampler=inner_sampler,
                           outer_sampler=outer_sampler,
                           order=tuple(order), bound=bound,
                           bound_expr=bound_expr, outer_point=outer_point,
                           inner_point=inner_point, laminar=laminar)


def _probing_trial(pipeline: ProbingPipeline, a_out: int, act: int,
                   fam_in: FeasibleFamily, fam_out: FeasibleFamily,
                   order: Sequence[int]) -> tuple[int, int, float]:
    instance = pipeline.instance
    deadlines = instance.deadlines
    probed = 0
    selected = 0
    position = 0
    for e in order:
        bit = 1 << e
        if (a_out & bit and fam_in.member(selected | bit)
                and fam_out.member(probed | bit)):
            probed |= bit
            position += 1
            if deadlines is not None and position > deadlines[e]:
                raise AssertionError(
                    f"element {e} probed at position {position} past its "
                    f"deadline {deadlines[e]}")
            if act & bit:
                selected |= bit
    if selected != probed & act & a_out:
        raise AssertionError("selected set must be the active probed elements")
    if not constraint_member(instance.inner)(selected):
        raise AssertionError("selection violated the inner family")
    if not constraint_member(instance.outer)(probed):
        raise AssertionError("probes violated the outer family")
    if pipeline.laminar is not None and not pipeline.laminar.indep(probed):
        raise AssertionError("probes violated the deadline matroid")
    value = sum(instance.w[e] for e in iter_bits(selected))
    return probed, selected, value


def run_probing(pipeline: ProbingPipeline, gen: np.random.Generator,
                order: Optional[Sequence[int]] = None
                ) -> tuple[ElementSubset, ElementSubset, float]:
    """One probing run; returns (probed set Q, selected set S, value w(S))."""
    n = pipeline.instance.n
    row = gen.random(pipeline.draw_width)
    a_out = sum(1 << e for e in range(n)
                if row[e] < pipeline.outer_point[e])
    act = sum(1 << e for e in range(n) if row[n + e] < pipeline.instance.p[e])
    at = 2 * n
    fam_in = pipeline.inner_sampler.sample_from_row(
        row[at:at + pipeline.inner_sampler.draw_count])
    at += pipeline.inner_sampler.draw_count
    fam_out = pipeline.outer_sampler.sample_from_row(
        row[at:at + pipeline.outer_sampler.draw_count])
    probed, selected, value = _probing_trial(
        pipeline, a_out, act, fam_in, fam_out,
        pipeline.order if order is None else order)
    return (ElementSubset(probed, n), ElementSubset(selected, n), value)


def run_probing_with_deadlines(pipeline: ProbingPipeline,
                               gen: np.random.Generator
                               ) -> tuple[ElementSubset, ElementSubset, float]:
    """One deadline-respecting probing run in ascending-deadline order.

    The pipeline must come from an instance with deadlines; probing order
    and the laminar outer restriction were fixed by prepare_probing, and the
    per-run position assertion fires if a probe lands past its deadline.
    """
    if pipeline.instance.deadlines is None:
        raise ValueError("pipeline has no deadlines; use run_probing")
    return run_probing(pipeline, gen)


def probing_mean_value(pipeline: ProbingPipeline, trials: int, seed: SeedSpec,
                       order: Optional[Sequence[int]] = None,
                       collect: Optional[list] = None) -> MeanEstimate:
    """Mean probing value over seeded trials; asserts feasibility per run.

    ``collect``, if given, receives every per-trial value in trial order.
    """
    instance = pipeline.instance
    n = instance.n
    xv = pipeline.outer_point.values
    pv = np.asarray(instance.p)
    use_order = tuple(pipeline.order if order is None else order)
    k_in = pipeline.inner_sampler.draw_count
    total = 0.0
    total_sq = 0.0
    for _start, block in uniform_blocks(seed, _DOMAIN_TRIALS, trials,
                                        pipeline.draw_width):
        a_outs = pack_mask_rows(block[:, :n] < xv)
        acts = pack_mask_rows(block[:, n:2 * n] < pv)
        fams_in = pipeline.inner_sampler.sample_block(
            block[:, 2 * n:2 * n + k_in])
        fams_out = pipeline.outer_sampler.sample_block(
            block[:, 2 * n + k_in:])
        for a_out, act, fin, fout in zip(a_outs.tolist(), acts.tolist(),
                                         fams_in, fams_out):
            _q, _s, value = _probing_trial(pipeline, a_out, act, fin, fout,
                                           use_order)
            total += value
            total_sq += value * value
            if collect is not None:
                collect.append(value)
    return MeanEstimate.from_moments(total, total_sq, trials)


def probing_worst_order(pipeline: ProbingPipeline, trials: int,
                        seed: SeedSpec,
                        mode: str = "exhaustive") -> tuple[AdversarySearchResult, MeanEstimate]:
    """Adversarial probe order search (no-deadline instances only)."""
    if pipeline.instance.deadlines is not None:
        raise ValueError("deadline instances fix their probe order")
    n = pipeline.instance.n
    states = []
    k_in = pipeline.inner_sampler.draw_count
    xv = pipeline.outer_point.values
    pv = np.asarray(pipeline.instance.p)
    for _start, block in uniform_blocks(seed, _DOMAIN_TRIALS, trials,
                                        pipeline.draw_width):
        a_outs = pack_mask_rows(block[:, :n] < xv)
        acts = pack_mask_rows(block[:, n:2 * n] < pv)
        fams_in = pipeline.inner_sampler.sample_block(
            block[:, 2 * n:2 * n + k_in])
        fams_out = pipeline.outer_sampler.sample_block(block[:, 2 * n + k_in:])
        states.extend(zip(a_outs.tolist(), acts.tolist(), fams_in, fams_out))

    def trial_value(state, order) -> float:
        a_out, act, fin, fout = state
        return _probing_trial(pipeline, a_out, act, fin, fout, order)[2]

    result = worst_order_value(lambda t: states[t], trial_value, n, trials,
                               mode=mode, seed=seed)
    totals = [trial_value(s, result.worst_order) for s in states]
    return result, MeanEstimate.from_values(totals)


@dataclass(frozen=True)
class RatioReport:
    """Mean value relative to a benchmark, with the bound being tested."""

    ratio: float
    ci_halfwidth: float
    mean: float
    benchmark: float
    bound: float
    bound_expr: str
    trials: int

    def passes(self, extra_slack: float = 0.0) -> bool:
        return (self.ratio + 3 * self.ci_halfwidth + extra_slack
                >= self.bound - 1e-15)


def estimate_competitive_ratio(estimate: MeanEstimate, benchmark: float,
                               bound: float, bound_expr: str) -> RatioReport:
    """Ratio of the estimated mean to a benchmark value.

    A zero benchmark with a zero mean reports ratio 1 (nothing was lost);
    a zero benchmark with positive mean is infinity.
    """
    if benchmark == 0.0:
        ratio = 1.0 if estimate.mean == 0.0 else float("inf")
        ci = 0.0
    else:
        ratio = estimate.mean / benchmark
        ci = estimate.halfwidth / benchmark
    return RatioReport(ratio=ratio, ci_halfwidth=ci, mean=estimate.mean,
                       benchmark=benchmark, bound=bound,
                       bound_expr=bound_expr, trials=estimate.trials)
