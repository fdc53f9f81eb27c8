"""Robust nonlinear fitting that trusts only the best-fitting points.

The objective sums the ``p`` smallest squared residuals, so up to ``r - p``
wild points cannot drag the fit; a damped Gauss-Newton solver minimizes it,
and a multistart voting layer picks ``p`` automatically and reports the
points left out as outliers.
"""

from .datagen import (
    ParseError,
    SyntheticInstance,
    generate,
    generate_circle,
    read_instance,
    write_instance,
)
from .lovo import (
    ActiveSet,
    LovoProblem,
    Observation,
    active_jacobian,
    lovo_gradient,
    residual_vector,
    select_active,
    sp_value,
)
from .metrics import (
    DetectionStats,
    SingleDetection,
    adjustment_error,
    aggregate,
    relative_errors,
    score_detection,
)
from .models import (
    BUILTIN_MODEL_NAMES,
    EvaluationError,
    Model,
    builtin_model,
    residual,
    residual_jac_row,
)
from .solver import (
    SolverOutcome,
    SolverParams,
    TraceRecord,
    lm_direction,
    rho,
    solve,
)
from .voting import (
    FitReport,
    PerPRecord,
    VotingParams,
    best_per_p,
    build_similarity,
    preprocess,
    raff_fit,
    similarity_tolerance,
    vote_and_select,
)

__version__ = "0.1.0"

__all__ = [
    "ActiveSet",
    "BUILTIN_MODEL_NAMES",
    "DetectionStats",
    "EvaluationError",
    "FitReport",
    "LovoProblem",
    "Model",
    "Observation",
    "ParseError",
    "PerPRecord",
    "SingleDetection",
    "SolverOutcome",
    "SolverParams",
    "SyntheticInstance",
    "TraceRecord",
    "VotingParams",
    "active_jacobian",
    "adjustment_error",
    "aggregate",
    "best_per_p",
    "build_similarity",
    "builtin_model",
    "generate",
    "generate_circle",
    "lm_direction",
    "lovo_gradient",
    "preprocess",
    "raff_fit",
    "read_instance",
    "relative_errors",
    "residual",
    "residual_jac_row",
    "rho",
    "score_detection",
    "select_active",
    "similarity_tolerance",
    "solve",
    "sp_value",
    "vote_and_select",
    "write_instance",
    "__version__",
]
