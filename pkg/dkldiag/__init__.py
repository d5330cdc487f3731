from .autodiff import OptSchedule, ParamVector
from .base import PosteriorPredictive, TraceRecord
from .core import CholeskyError, RandomStream
from .harness import (
    Dataset,
    ExperimentConfig,
    ExperimentError,
    ExperimentRunnerRegistry,
    MetricsReport,
    SeedSweep,
    compare_minibatch_regularization,
    diagnose_correlation,
    evaluate_predictions,
    load_config,
    load_dataset,
    run_experiment,
    run_seed_sweep,
)
from .models import (
    ArdSeParams,
    DeepKernel,
    GpModel,
    NetSpec,
    SvgpModel,
    TrainingDivergedError,
    fit_full_batch,
    fit_svgp,
    log_marginal_decomposed,
    predict,
)
from .samplers import HmcConfig, SgldConfig, hmc_run, sgld_run

__version__ = "0.1.0"

__all__ = [
    # base
    "PosteriorPredictive",
    "TraceRecord",
    "RandomStream",
    "CholeskyError",
    "ParamVector",
    "OptSchedule",
    # models
    "ArdSeParams",
    "DeepKernel",
    "NetSpec",
    "GpModel",
    "SvgpModel",
    "TrainingDivergedError",
    "log_marginal_decomposed",
    "predict",
    "fit_full_batch",
    "fit_svgp",
    # samplers
    "HmcConfig",
    "SgldConfig",
    "hmc_run",
    "sgld_run",
    # experiments
    "Dataset",
    "load_dataset",
    "ExperimentConfig",
    "load_config",
    "ExperimentError",
    "ExperimentRunnerRegistry",
    "MetricsReport",
    "run_experiment",
    "SeedSweep",
    "run_seed_sweep",
    "compare_minibatch_regularization",
    "diagnose_correlation",
    "evaluate_predictions",
]
