"""In-range tracking trajectory optimisation.

Optimal control of trackers that should stay within a radius of a moving
reference, either always (constraints) or as much as possible (a smoothed
indicator cost), solved by direct collocation with an augmented-Lagrangian
NLP solver and a smoothing continuation.
"""

from .config import ConfigError, RunConfig, load_config, parse_config, shipped_config, shipped_configs
from .continuation import ContinuationSchedule, run_homotopy
from .costs import RangeSpec, SmoothingParams
from .ocp import OcpSpec, OcpValidationError, ReferenceSignal, Trajectory
from .runner import RunResult, metrics_document, run_config, run_scenario, write_artifacts
from .scenarios import Metrics, Scenario, ScenarioConfig, compute_metrics, make_scenario
from .solver import NlpSolution, SolverOptions, solve
from .transcription import Mesh, Transcription, transcribe

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContinuationSchedule",
    "Mesh",
    "Metrics",
    "NlpSolution",
    "OcpSpec",
    "OcpValidationError",
    "RangeSpec",
    "ReferenceSignal",
    "RunConfig",
    "RunResult",
    "Scenario",
    "ScenarioConfig",
    "SmoothingParams",
    "SolverOptions",
    "Trajectory",
    "Transcription",
    "compute_metrics",
    "load_config",
    "make_scenario",
    "metrics_document",
    "parse_config",
    "run_config",
    "run_homotopy",
    "run_scenario",
    "shipped_config",
    "shipped_configs",
    "solve",
    "transcribe",
    "write_artifacts",
]
