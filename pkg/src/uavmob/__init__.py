"""Deterministic cellular mobility simulator for aerial and ground users."""

from .scenario import ScenarioConfig, ScenarioError, load_scenario, packaged, parse_scenario
from .sim import MetricsReport, SimResult, derive_seed, run, run_sweep

__all__ = [
    "ScenarioConfig", "ScenarioError", "load_scenario", "packaged", "parse_scenario",
    "MetricsReport", "SimResult", "derive_seed", "run", "run_sweep",
]
__version__ = "0.1.0"
