"""Numerical laboratory for linear and semilinear backward stochastic heat equations on a binomial tree."""

from .errors import (BSPDELabError, ConfigFileError, ConfigurationError, DataError, ResourceLimitError,
                     UnsupportedConfigurationError, UsageError)
from .grid import Discretization
from .solver import AdaptedField, BSPDESolution, CoefficientSet, ProblemData, solve_linear
from .tree import AdaptedRV, ScenarioTree, build_tree

__all__ = [
    "AdaptedField", "AdaptedRV", "BSPDELabError", "BSPDESolution", "CoefficientSet", "ConfigFileError",
    "ConfigurationError", "DataError", "Discretization", "ProblemData", "ResourceLimitError", "ScenarioTree",
    "UnsupportedConfigurationError", "UsageError", "build_tree", "solve_linear",
]
