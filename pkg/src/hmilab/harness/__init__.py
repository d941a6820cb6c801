"""Experiment configuration, sweeps, output file sets and the `lab` CLI."""

from .config import ExperimentConfig, load_config, parse_config, recipe_path, validate_config
from .outputs import emit_outputs, load_manifest, read_sweep_csv, validate_manifest
from .sweep import SweepRow, crossover_alpha, fit_scaling, median_spike_counts, run_sweep, sweep_columns

__all__ = [
    "ExperimentConfig", "SweepRow", "crossover_alpha", "emit_outputs", "fit_scaling", "load_config",
    "load_manifest", "median_spike_counts", "parse_config", "read_sweep_csv", "recipe_path", "run_sweep",
    "sweep_columns", "validate_config", "validate_manifest",
]
