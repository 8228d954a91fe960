"""Deterministic simulator for deadline-aware scheduling of serverless DAGs.

The package models two control-plane stacks over the same virtual cluster:
a semi-global scheduler with proactive sandbox management and lottery load
balancing, and a centralized FIFO baseline with reactive cold starts.
"""
from .engine import Engine, derive_seed
from .metrics import RunReport, compare_runs, load_summary, percentile
from .model import (
    DagRequest,
    DagSpec,
    DagValidationError,
    FunctionSpec,
    critical_path_us,
    static_slack_us,
    validate_dag,
)
from .scenario import ScenarioConfig, ScenarioError, load_scenario, parse_scenario
from .simulation import Simulation, run_scenario

__version__ = "0.1.0"

__all__ = [
    "DagRequest",
    "DagSpec",
    "DagValidationError",
    "Engine",
    "FunctionSpec",
    "RunReport",
    "ScenarioConfig",
    "ScenarioError",
    "Simulation",
    "compare_runs",
    "critical_path_us",
    "derive_seed",
    "load_scenario",
    "load_summary",
    "parse_scenario",
    "percentile",
    "run_scenario",
    "static_slack_us",
    "validate_dag",
    "__version__",
]
