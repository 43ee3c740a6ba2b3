"""Online contention resolution schemes with verification harness.

Subpackages follow the pipeline: `core` (activation sampling, seeded
streams), `matroids` (oracles), `schemes` (the OCRS constructions),
`harness` (statistical verification), `optimize` (relaxation solvers),
`applications` (prophet and probing pipelines), `submodular` (multilinear
machinery), and `cli` (the batch runner).
"""

from .core import (ElementSubset, FractionalPoint, GroundSet, SeedSpec,
                   downsample_active, fragment_from_json, sample_active_set,
                   scale_point)
from .matroids import (ExplicitMatroid, GraphicMatroid, LaminarMatroid,
                       Matroid, MatroidView, PartitionMatroid, UniformMatroid,
                       check_matroid_axioms, contract_restrict,
                       in_scaled_matroid_polytope, matroid_from_json,
                       max_weight_independent, random_point_in_polytope)
from .schemes import (ChainDecomposition, FeasibleFamily, Graph,
                      GreedyOcrsFactory, IntersectionFactory, KnapsackFactory,
                      MatchingFactory, MatroidChainFactory, combine_families,
                      factory_from_json, graph_from_json, knapsack_family,
                      matching_family, matroid_chain_decompose,
                      matroid_family, run_greedy_ocrs)
from .harness import (AdversarySearchResult, MeanEstimate,
                      SelectabilityReport, brute_force_selectability,
                      estimate_selectability,
                      knapsack_deterministic_impossibility, worst_order_value)
from .optimize import (DiscreteDistribution, KnapsackConstraint,
                       LinearProgram, TailFunction, adaptive_probing_optimum,
                       distribution_from_json, simplex_solve,
                       solve_probing_lp, solve_prophet_relaxation, tail_value,
                       threshold)
from .applications import (ProbingInstance, ProphetInstance, RatioReport,
                           brute_force_prophet_opt, deadline_matroid,
                           estimate_competitive_ratio, prepare_probing,
                           prepare_prophet, probing_mean_value,
                           prophet_thresholds, prophet_worst_order,
                           run_probing, run_probing_with_deadlines,
                           run_prophet)
from .submodular import (MultilinearEvaluator, SubmodularOracle,
                         characteristic_crs, continuous_greedy,
                         coverage_function, directed_cut, half_subsample_value,
                         multilinear_F, multilinear_exact, multilinear_sampled,
                         ocrs_submodular_value, run_submodular_probing,
                         submodular_from_json, weighted_matroid_rank)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
