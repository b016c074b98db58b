from .config import ConfigError, ExperimentConfig, load_config, parse_config_text
from .experiments import ExperimentResult, run_experiment, run_trial, trial_seed

__all__ = ["ConfigError", "ExperimentConfig", "ExperimentResult", "load_config",
           "parse_config_text", "run_experiment", "run_trial", "trial_seed"]
