"""Telegraph signal in white noise: filtering and estimation of switching rates."""

__version__ = "0.1.0"

from .model import (
    ModelSpec,
    ModelValidationError,
    ParameterDomain,
    StateSpace,
    ThetaParams,
    validate_model,
)
from .simulate import ObservationPath, simulate_path
from .filter import run_filter, run_filter_with_sensitivities, log_likelihood
from .moments import estimate_moments
from .mle import EstimationConfig, one_step_process, two_step_process
from .fisher import fisher_by_ergodic_average, invariant_density

__all__ = [
    "ModelSpec", "ModelValidationError", "ParameterDomain", "StateSpace", "ThetaParams",
    "validate_model", "ObservationPath", "simulate_path", "run_filter",
    "run_filter_with_sensitivities", "log_likelihood", "estimate_moments",
    "EstimationConfig", "one_step_process", "two_step_process",
    "fisher_by_ergodic_average", "invariant_density",
]
