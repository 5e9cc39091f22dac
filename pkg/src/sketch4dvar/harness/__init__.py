"""Experiment harness: presets, scenario generation, runs, sweeps and the CLI."""
from .config import ConfigError, ExperimentConfig, PRESETS, load_config, preset
from .run import RunArtifacts, SolverFailure, report, run_experiment, sweep
from .scenario import Scenario, generate_scenario

__all__ = ["ConfigError", "ExperimentConfig", "PRESETS", "load_config", "preset", "RunArtifacts",
           "SolverFailure", "report", "run_experiment", "sweep", "Scenario", "generate_scenario"]
