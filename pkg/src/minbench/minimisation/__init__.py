from .curves import (
    LearningCurve,
    PowerLawFit,
    PredictionError,
    StopDecision,
    StoppingRule,
    build_learning_curve,
    decide_stop,
    fit_power_law,
    predicted_gain,
    prediction_error,
)
from .strategies import (
    STRATEGIES,
    SUBSET_STRATEGIES,
    MinimisationPlan,
    apply,
    apply_sequence,
)

__all__ = [
    "LearningCurve",
    "MinimisationPlan",
    "PowerLawFit",
    "PredictionError",
    "STRATEGIES",
    "SUBSET_STRATEGIES",
    "StopDecision",
    "StoppingRule",
    "apply",
    "apply_sequence",
    "build_learning_curve",
    "decide_stop",
    "fit_power_law",
    "predicted_gain",
    "prediction_error",
]
