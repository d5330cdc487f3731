"""
Data ingestion, metrics and experiment orchestration.
"""

from .config import MODEL_KINDS, ConfigError, DatasetConfig, ExperimentConfig, apply_overrides, load_config
from .data import (
    Dataset,
    DatasetError,
    Normalization,
    load_dataset,
    make_blob_classification,
    make_synthetic_regression,
    make_toy_regression,
    normalize_only,
    split_and_normalize,
    subsample,
)
from .experiment import (
    CorrelationDiagnosis,
    RunResult,
    build_dataset,
    diagnose_correlation,
    evaluate_predictions,
    prepare_data,
    run_experiment,
)
from .metrics import (
    MetricsError,
    MetricsReport,
    accuracy,
    ece,
    incorrect_only_ll,
    mean_gaussian_ll,
    mean_log_prob,
    rmse,
)
from .registry import ExperimentRunnerRegistry
from .runners import BaseRunner, ExperimentError, FitOutcome
from .sweep import (
    ComparisonOutcome,
    SeedSweep,
    SweepConfig,
    SweepResult,
    compare_minibatch_regularization,
    run_seed_sweep,
)

__all__ = [
    # config
    "ConfigError",
    "DatasetConfig",
    "ExperimentConfig",
    "MODEL_KINDS",
    "apply_overrides",
    "load_config",
    # data
    "Dataset",
    "DatasetError",
    "Normalization",
    "load_dataset",
    "split_and_normalize",
    "normalize_only",
    "subsample",
    "make_toy_regression",
    "make_synthetic_regression",
    "make_blob_classification",
    # metrics
    "MetricsError",
    "MetricsReport",
    "rmse",
    "mean_gaussian_ll",
    "accuracy",
    "ece",
    "incorrect_only_ll",
    "mean_log_prob",
    # experiments
    "ExperimentError",
    "BaseRunner",
    "FitOutcome",
    "ExperimentRunnerRegistry",
    "RunResult",
    "CorrelationDiagnosis",
    "build_dataset",
    "prepare_data",
    "run_experiment",
    "diagnose_correlation",
    "evaluate_predictions",
    # sweeps
    "SweepConfig",
    "SweepResult",
    "SeedSweep",
    "ComparisonOutcome",
    "run_seed_sweep",
    "compare_minibatch_regularization",
]
