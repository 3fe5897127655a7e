"""Hypothesis testing on stationary random networks sampled by random walks."""
from rgstat.basis import BallClass, BasisRegistry, classify
from rgstat.errors import (
    BudgetExceededError,
    ConfigError,
    IncompatibleMeasuresError,
    InvariantViolation,
    NotATreeError,
    RgstatError,
)
from rgstat.generators import (
    MarkovTreeModel,
    OffspringLaw,
    TransitiveGraphSpec,
    build_oracle,
)
from rgstat.graph import CanonicalCode, RootedPatch, ball, canonical_encode
from rgstat.inference import (
    EntropyProfile,
    ForbiddenSet,
    TestVerdict,
    WalkDownSeries,
    consistency_harness,
    entropy_profile,
    kt_log_probability,
    markov_order_test,
    walk_down,
    zero_frequency_test,
)
from rgstat.sampling import (
    RadiusSchedule,
    empirical_distance,
    empirical_measure,
    model_measure,
    random_walk,
    sample_region,
)

__version__ = "0.1.0"
