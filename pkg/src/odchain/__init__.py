"""Online dynamic OD demand estimation with explicit trip chaining.

The package estimates time-dependent origin-destination demand from link
counts, filters deviations from a historical matrix interval by interval,
and carries morning deviations to later trip legs through a chain of linear
leg operators, with an optional conservation rescale.
"""

from .errors import (
    ChainConsistencyError,
    ConfigurationError,
    DegenerateProfileError,
    NumericalError,
    OdchainError,
)
from .experiment import ExperimentReport, emit_report, generate_truth_and_history, rmse, run_experiment
from .legs import ChainSpec, DemandLeg, LegOperator, build_leg_operator
from .network import Link, Network, Path, TimeGrid, Zone, build_toy_network, validate_network
from .scenario import ScenarioConfig, load_scenario, packaged_scenario_path

__version__ = "0.1.0"

__all__ = [
    "ChainConsistencyError",
    "ChainSpec",
    "ConfigurationError",
    "DegenerateProfileError",
    "DemandLeg",
    "ExperimentReport",
    "LegOperator",
    "Link",
    "Network",
    "NumericalError",
    "OdchainError",
    "Path",
    "ScenarioConfig",
    "TimeGrid",
    "Zone",
    "build_leg_operator",
    "build_toy_network",
    "emit_report",
    "generate_truth_and_history",
    "load_scenario",
    "packaged_scenario_path",
    "rmse",
    "run_experiment",
    "validate_network",
    "__version__",
]
