"""devcert: worst-case deviation certification against a reference model."""

from .errors import (
    AbstainUnconfigured,
    AssumptionViolated,
    BudgetTooSmall,
    DevcertError,
    EmptyCertSet,
    EmptyRegion,
    MissingStats,
    OracleFailure,
    ParseError,
    SchemaError,
    SchemaMismatch,
    UnsupportedCondition,
    UnsupportedNorm,
    UnsupportedPair,
    VersionError,
)
from .types import (
    ABSTAIN,
    Abstain,
    BallUnion,
    Box,
    CategoricalFeature,
    CategorySet,
    CertificationSet,
    ContinuousFeature,
    DeviationFn,
    FeatureSpace,
    FiniteSet,
    FullSpace,
    Interval,
    Prediction,
    Score,
    deviation,
    denormalize_point,
    destandardize_point,
    full_box,
    normalize_point,
    standardize_point,
)
from .geometry import (
    box_intersect,
    box_meets_certset,
    clip_box_to_ball,
    linear_max_over_lp_ball,
)
from .models import (
    AdditiveModel,
    CategoryTableTerm,
    Condition,
    DecisionTree,
    Leaf,
    LinearTerm,
    PiecewiseConstantTerm,
    Rule,
    RuleEnsemble,
    RuleList,
    SplitNode,
    TreeEnsemble,
    WeightedRule,
    constant_tree,
    predict,
    rulelist_to_tree,
    ruleensemble_to_ensemble,
    tree_from_splits,
    tree_leaves_meeting,
)
from .results import CertResult, Maximizer
from .certify_tree import breakdown_by_reference_leaf, certify_tree_tree
from .certify_additive import (
    certify_additive_vs_additive,
    certify_additive_vs_constant,
    certify_additive_vs_tree,
    extremize_additive,
    feature_contributions,
    robust_accuracy_additive,
    robust_loss_additive,
)
from .certify_ensemble import (
    Budget,
    LeafGraph,
    build_leaf_graph,
    certify_ensemble_vs_tree,
    heuristic_bound,
)
from .blackbox import (
    OptRun,
    PartitionCell,
    PartitionSpec,
    combine_lipschitz,
    difference_oracle,
    hoo_maximize,
    partition_from_models,
    partitioned_maximize,
)

__version__ = "0.1.0"
