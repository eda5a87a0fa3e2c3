"""Intermittent-communication leader-following consensus for uncertain
strict-feedback multi-agent systems under stochastic disturbances."""

from .config import ExperimentConfig, SimConfig, load, paper_config
from .engine import prepare, run, run_ensemble

__all__ = ["ExperimentConfig", "SimConfig", "load", "paper_config", "prepare", "run", "run_ensemble"]
__version__ = "0.1.0"
