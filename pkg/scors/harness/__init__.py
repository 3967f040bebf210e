"""Experiment harness: config parsing, experiment drivers, CSV artifacts and the CLI."""

from .config import ExperimentConfig, load_config, parse_config
from .experiments import run_experiment, validate_step_conditions

__all__ = ["ExperimentConfig", "load_config", "parse_config", "run_experiment", "validate_step_conditions"]
