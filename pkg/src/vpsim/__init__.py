"""Virtual-point controlled running: TSLIP simulation and GRF analysis."""
from .errors import (ConfigError, ConvergenceError, EstimationError, GeometryError,
                     IntegrationError, PhaseError, SimulationFailure, VpsimError)
from .model import ComState, ModelParams, StanceGeometry, VpTarget

__version__ = "0.1.0"

__all__ = [
    "ComState", "ModelParams", "StanceGeometry", "VpTarget",
    "ConfigError", "ConvergenceError", "EstimationError", "GeometryError",
    "IntegrationError", "PhaseError", "SimulationFailure", "VpsimError",
]
