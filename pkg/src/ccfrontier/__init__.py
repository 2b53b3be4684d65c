"""Efficient frontiers of chance-constrained programs by smoothed stochastic approximation."""

from .errors import (ContractError, InfeasibleError, InitializationError,
                     UnsupportedCapability)
from .frontier import (FrontierPoint, FrontierResult, initialize_guess,
                       monotone_envelope, solve_fixed_risk, trace_frontier)
from .problems import REGISTRY, make_problem
from .risk import RiskEstimate, estimate_risk, risk_upper_bound
from .solver import RunConfig, solve_frontier_point

__version__ = "0.1.0"

__all__ = [
    "ContractError", "InfeasibleError", "InitializationError",
    "UnsupportedCapability", "FrontierPoint", "FrontierResult",
    "initialize_guess", "monotone_envelope", "solve_fixed_risk",
    "trace_frontier", "REGISTRY", "make_problem", "RiskEstimate",
    "estimate_risk", "risk_upper_bound", "RunConfig", "solve_frontier_point",
]
