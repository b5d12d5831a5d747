"""fhglab: a simulation laboratory for online coalition formation in
fractional hedonic games.

Exact welfare computation (rationals and Q(sqrt2)), offline oracles, an
online execution engine with strict and free-dissolution semantics, the
matching-based online policies, adversarial instance families with an
interactive phased adversary, and a CLI harness for competitive-ratio
experiments.
"""

from .core import (
    AgentNotInCoalition,
    DirectedFHG,
    FHGError,
    InstanceTooLarge,
    InvalidPartition,
    NotAMatching,
    Partition,
    SymmetricFHG,
    UnknownAgent,
    coalition_welfare,
    instance_from_json,
    instance_id,
    instance_to_json,
    is_tree_domain,
    load_instance,
    matching_weight,
    partition_welfare,
    save_instance,
    symmetrize,
    utility,
)
from .engine import (
    Branch,
    CompetitiveReport,
    DissolutionInStrictMode,
    IrrevocabilityViolation,
    MultipleDissolutions,
    Observation,
    OnlineDecision,
    OnlinePolicy,
    Trace,
    competitive_ratio,
    derive_seed,
    expected_welfare_exact,
    expected_welfare_mc,
    exact_outcome_distribution,
    ratio_of,
    run_online,
)
from .oracles import (
    InvalidBeta,
    all_matchings,
    all_partitions,
    average_edge_bound,
    beta_above_sequence_threshold,
    max_weight_matching,
    optimal_partition,
    sequence_horizon,
    star_welfare,
)
from .policies import (
    GreedyMaximalMatching,
    KTooLargeForInstance,
    LiftedPolicy,
    NaiveJoinBestNeighbor,
    NotAStarShapedInstance,
    NotMatchingValued,
    RestrictToMatching,
    SampledMwmEdge,
    StarMaxEdgePolicy,
    StarView,
    ThresholdDissolutionMatching,
    make_policy,
    probability_bank,
)
from .adversaries import (
    AdversaryBudget,
    AdversaryInstance,
    AdversaryResult,
    InvalidSpec,
    PhaseRecord,
    RecursionEnumerationMismatch,
    StarSpec,
    bistar_prefix_multisets_match,
    gen_bistar,
    gen_random_tree_domain,
    gen_star,
    hr_enumeration,
    hr_recursion,
    max_edge_conversion_check,
    run_dissolution_adversary,
    star_match_probabilities,
    star_view,
)
from .rationals import (
    FHG_DISSOLUTION_BOUND,
    MATCHING_DISSOLUTION_BOUND,
    OPT_THRESHOLD_BETA,
    Quad,
    SQRT2,
    THRESHOLD_BETA,
    parse_scalar,
    quad,
    scalar_to_str,
)

__version__ = "0.1.0"
