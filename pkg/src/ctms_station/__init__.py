"""Service-station placement on highways with a CTM-s simulator.

Modules:
    ctm           CTM-s dynamics (types, one step, whole horizon)
    metrics       delay series, aggregate delay, peak reduction, design cost
    design_space  feasible designs, sampling, projection
    ga            elitist genetic algorithm
    bruteforce    grid-search oracle
    dataset       GA-labelled training corpus
    surrogate     MLP surrogate trained with Adam on MSLE
    scenarios     scenario files, synthetic demand, A2/A4 catalog, comparisons
    cli           command-line entry point
"""

from .ctm import (CellParams, DemandProfile, FixedParams, SimState, SimTrajectory,
                  StationDesign, StretchParams, simulate, step)
from .design_space import DesignBounds, is_feasible, project, sample_uniform
from .errors import CTMSError, ConfigurationError, DomainError, SimulationError
from .metrics import CongestionReport, CostEvaluator, design_cost, delay_series

__version__ = "0.1.0"

__all__ = [
    "CellParams", "StretchParams", "StationDesign", "FixedParams", "DemandProfile",
    "SimState", "SimTrajectory", "simulate", "step",
    "DesignBounds", "is_feasible", "project", "sample_uniform",
    "CongestionReport", "CostEvaluator", "design_cost", "delay_series",
    "CTMSError", "ConfigurationError", "DomainError", "SimulationError",
]
