"""Model reduction and worst-case uncertainty quantification for slow-fast SDEs
with interval-valued diffusion coefficients."""

from gredux.errors import (
    ConfigError,
    DomainError,
    InsufficientSamplesError,
    OracleError,
    ReductionError,
    SimulationError,
    SolverError,
)
from gredux.sublinear import (
    ThetaGrid,
    UncertaintyInterval,
    WorstCaseEstimate,
    g_argmax,
    g_nonlinearity,
    worst_case_expectation,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DomainError",
    "InsufficientSamplesError",
    "OracleError",
    "ReductionError",
    "SimulationError",
    "SolverError",
    "ThetaGrid",
    "UncertaintyInterval",
    "WorstCaseEstimate",
    "g_argmax",
    "g_nonlinearity",
    "worst_case_expectation",
]
