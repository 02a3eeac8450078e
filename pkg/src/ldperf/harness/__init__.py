"""Configuration, Monte Carlo validation and experiment orchestration."""

from .config import ExperimentConfig, load_config, load_preset, parse_config, preset_names
from .experiment import Bundle, StageError, run_experiment
from .gaussianity import GaussianityReport, gaussianity_report
from .montecarlo import ErrorRate, McPoint, McResult, clopper_pearson, false_alarms, misses

__all__ = [
    "Bundle", "ErrorRate", "ExperimentConfig", "GaussianityReport", "McPoint", "McResult",
    "StageError", "clopper_pearson", "false_alarms", "gaussianity_report", "load_config",
    "load_preset", "misses", "parse_config", "preset_names", "run_experiment",
]
