"""Experiment orchestration: configuration, commands and result emission."""
from .commands import COMMANDS, run
from .config import ExperimentConfig, build_config, load_config

__all__ = ["COMMANDS", "ExperimentConfig", "build_config", "load_config", "run"]
