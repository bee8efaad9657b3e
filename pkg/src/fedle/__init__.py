"""Battery-constrained federated learning simulator with FedLE client selection."""

from .config import ExperimentConfig, parse_config
from .engine import ExperimentHistory, RoundRecord, Simulation, run_experiment

__all__ = ["ExperimentConfig", "ExperimentHistory", "RoundRecord", "Simulation", "parse_config", "run_experiment"]
__version__ = "0.1.0"
