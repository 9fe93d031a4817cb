"""Experiment harness: configs, runs, sweeps and artefacts."""
from .config import ExperimentConfig, default_config, load, parse
from .outputs import emit_outputs
from .runner import RunRecord, run_dqn, run_experiment, run_sweep, training_efficiency

__all__ = ["ExperimentConfig", "RunRecord", "default_config", "emit_outputs", "load", "parse", "run_dqn",
           "run_experiment", "run_sweep", "training_efficiency"]
