"""Cahn-Hilliard dynamics on embedded domains with an energy-stable linear scheme."""

from .config import ConfigError, RunConfig, parse_config
from .experiments import build, run
from .geometry import Embedding, build_embedding
from .grid import Grid
from .model import BoundaryData, PhysParams, SimState, initial_state
from .scheme import SolverOptions, StepFailure, Stepper, step

__all__ = [
    "BoundaryData", "ConfigError", "Embedding", "Grid", "PhysParams", "RunConfig",
    "SimState", "SolverOptions", "StepFailure", "Stepper", "build", "build_embedding",
    "initial_state", "parse_config", "run", "step",
]
__version__ = "0.1.0"
