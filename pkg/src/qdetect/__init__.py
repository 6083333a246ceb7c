"""Bayesian quickest detection of a drift change in a one-dimensional diffusion."""

from .boundary import BoundaryTable, ValueSlice
from .errors import (CapabilityError, ConfigError, DegenerateColumn, NoConvergence, NonMonotoneScheme,
                     NonPositiveSigma, NoRoot, NotInvertible, QDetectError, QuadratureFailure,
                     StateUnderflow, StiffnessFailure, SubclassViolation)
from .geometry import ChangeOfVariables, rho_hat, x_of, y_of
from .model import (Config, DiffusionModel, PenaltySpec, Prior, load_config, penalty_cost, rho,
                    validate_model)

__version__ = "0.1.0"

__all__ = [
    "BoundaryTable", "ValueSlice", "ChangeOfVariables", "Config", "DiffusionModel", "PenaltySpec", "Prior",
    "load_config", "penalty_cost", "rho", "rho_hat", "validate_model", "x_of", "y_of",
    "CapabilityError", "ConfigError", "DegenerateColumn", "NoConvergence", "NonMonotoneScheme",
    "NonPositiveSigma", "NoRoot", "NotInvertible", "QDetectError", "QuadratureFailure", "StateUnderflow",
    "StiffnessFailure", "SubclassViolation",
]
