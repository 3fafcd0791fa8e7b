"""Online constrained ranking with learned shadow prices."""

from trafficshape.errors import InvalidInputError, SchemaError, SizeLimitError
from trafficshape.session import SessionInstance
from trafficshape.matching import (
    Assignment,
    MatchingCertificate,
    brute_force_matching,
    greedy_matching,
    hungarian_max_weight,
)
from trafficshape.lp_dual import (
    ConstraintSpec,
    DualPrices,
    DualSolveReport,
    SampledLpConfig,
    dual_objective,
    solve_hindsight,
    solve_sampled_dual,
)
from trafficshape.engine import ServeDecision, ShapingEngine, score_matrix

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "ConstraintSpec",
    "DualPrices",
    "DualSolveReport",
    "InvalidInputError",
    "MatchingCertificate",
    "SampledLpConfig",
    "SchemaError",
    "ServeDecision",
    "SessionInstance",
    "ShapingEngine",
    "SizeLimitError",
    "brute_force_matching",
    "dual_objective",
    "greedy_matching",
    "hungarian_max_weight",
    "score_matrix",
    "solve_hindsight",
    "solve_sampled_dual",
]
