"""Datasets, metrics, experiment orchestration, plotting and the CLI."""
from .dataset import (
    Dataset,
    DatasetConfig,
    DatasetError,
    Episode,
    benchmark_config,
    derive_seed,
    generate_dataset,
    load_dataset,
)
from .experiment import (
    AblationConfig,
    CellSummary,
    ExperimentConfig,
    ExperimentError,
    format_table,
    run_ablation_suite,
    run_experiment,
)
from .metrics import LengthMismatch, MetricsReport, position_mae

__all__ = [
    "AblationConfig", "CellSummary", "Dataset", "DatasetConfig", "DatasetError", "Episode",
    "ExperimentConfig", "ExperimentError", "LengthMismatch", "MetricsReport", "benchmark_config",
    "derive_seed", "format_table", "generate_dataset", "load_dataset", "position_mae",
    "run_ablation_suite", "run_experiment",
]
