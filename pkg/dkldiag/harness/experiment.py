"""
Experiment driver: data preparation, runner dispatch, metrics and plot-ready output files.

Files written to the output directory:

    config.json        resolved configuration
    trace.jsonl        one ``TraceRecord`` per line (training steps or retained samples)
    losses.csv         step, loss (network-only runs)
    metrics.json       ``MetricsReport``
    predictions.csv    per-point predictions on the evaluation split
    predictive.csv     x, mean, lo, hi on a 1-D grid in original units (mean +- 2 std)
    correlation.csv    x, rho prior correlation to a reference input (1-D only)
    params.txt         trained parameters in the checkpoint format
    chain/             retained samples of sampler runs
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from ..autodiff import OptimizerError
from ..base import TraceRecord
from ..core.linalg import CholeskyError
from ..core.random import RandomStream
from ..models import (
    CheckpointError,
    ExactGpError,
    FeatureNetError,
    KernelError,
    PretrainError,
    SvgpError,
    TrainingDivergedError,
    correlation_profile,
    mean_abs_correlation,
    save_checkpoint,
)
from ..models.exact_gp import TRACE_CORR_POINTS
from ..samplers import SamplerError, save_chain
from .config import DatasetConfig, ExperimentConfig
from .data import (
    Dataset,
    DatasetError,
    load_dataset,
    make_blob_classification,
    make_synthetic_regression,
    make_toy_regression,
    normalize_only,
    split_and_normalize,
    subsample,
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
from .runners import ExperimentError, FitOutcome

logger = logging.getLogger(__name__)

__all__ = [
    "RunResult",
    "CorrelationDiagnosis",
    "build_dataset",
    "prepare_data",
    "run_experiment",
    "diagnose_correlation",
    "evaluate_predictions",
]

MODULE_ERRORS = (
    TrainingDivergedError,
    ExactGpError,
    SvgpError,
    SamplerError,
    KernelError,
    FeatureNetError,
    PretrainError,
    CholeskyError,
    OptimizerError,
    MetricsError,
    CheckpointError,
)
FLOAT_FORMAT = "%.17g"


class RunResult(BaseModel):
    """Report, trace and written files of one experiment."""

    config: ExperimentConfig
    report: MetricsReport
    trace: List[TraceRecord] = Field(default_factory=list)
    out_dir: Optional[str] = Field(None, description="Directory the files were written to")
    files: List[str] = Field(default_factory=list, description="Names of the written files")

    model_config = ConfigDict(arbitrary_types_allowed=True)


class CorrelationDiagnosis(BaseModel):
    """SE versus deep-kernel fit on the same data."""

    se_mean_abs_corr: float
    dkl_mean_abs_corr: float
    se_objective_per_point: Optional[float] = None
    dkl_objective_per_point: Optional[float] = None
    se_test_ll: Optional[float] = None
    dkl_test_ll: Optional[float] = None
    over_correlated: bool = Field(..., description="The deep kernel correlates training inputs more than SE")


def build_dataset(config: DatasetConfig) -> Dataset:
    """Raw dataset named by ``config`` (before subsampling and normalization)."""
    if config.source == "toy":
        noise = 0.3 if config.noise is None else config.noise
        return make_toy_regression(config.size, config.data_seed, noise=noise)
    if config.source == "friedman":
        noise = 1.0 if config.noise is None else config.noise
        return make_synthetic_regression(config.size, config.data_seed, config.num_features, noise=noise)
    if config.source == "blobs":
        return make_blob_classification(config.size, config.data_seed, config.num_classes, config.num_features)
    return load_dataset(config.path, format=config.source, target=config.target, task=config.task)


def prepare_data(config: ExperimentConfig) -> Tuple[Dataset, Optional[Dataset]]:
    """
    Build, optionally subsample, then split and normalize.

    Returns:
        (train, test): ``test`` is None when the config trains on every point
    """
    data = config.dataset
    split_seed = config.seed if data.split_seed is None else data.split_seed
    dataset = build_dataset(data)
    if data.subsample is not None:
        dataset = subsample(dataset, data.subsample, split_seed)
    if data.test_fraction is None:
        return normalize_only(dataset), None
    return split_and_normalize(dataset, data.test_fraction, split_seed)


def _evaluate_split(outcome: FitOutcome, split: Dataset, prefix: str, fields: Dict) -> pd.DataFrame:
    if split.task == "regression" and outcome.predict_mixture is not None:
        # chain runs: density is the average of the per-sample densities
        mixture = outcome.predict_mixture(split.X)
        pred = mixture.as_gaussian()
        log_density = mixture.log_density(split.y)
        fields[f"{prefix}_rmse"] = rmse(pred.mean, split.y)
        fields[f"{prefix}_ll"] = float(np.mean(log_density))
        return pd.DataFrame({"y": split.y, "mean": pred.mean, "var": pred.var, "log_density": log_density})
    if split.task == "regression":
        pred = outcome.predict_gaussian(split.X)
        fields[f"{prefix}_rmse"] = rmse(pred.mean, split.y)
        fields[f"{prefix}_ll"] = mean_gaussian_ll(pred.mean, pred.var, split.y)
        return pd.DataFrame({"y": split.y, "mean": pred.mean, "var": pred.var})

    probs = outcome.predict_probs(split.X)
    fields[f"{prefix}_accuracy"] = accuracy(probs, split.y)
    fields[f"{prefix}_ll"] = mean_log_prob(probs, split.y)
    if prefix == "test":
        fields["test_ece"] = ece(probs, split.y)
        value, empty = incorrect_only_ll(probs, split.y)
        fields["incorrect_test_ll"] = value
        fields["incorrect_test_ll_empty"] = empty
    table = pd.DataFrame({"label": split.y})
    for c in range(probs.shape[1]):
        table[f"p_{c}"] = probs[:, c]
    return table


def _correlation_inputs(train: Dataset) -> np.ndarray:
    return train.X[:TRACE_CORR_POINTS]


def build_report(
    config: ExperimentConfig, outcome: FitOutcome, train: Dataset, test: Optional[Dataset]
) -> Tuple[MetricsReport, pd.DataFrame]:
    """Metrics on the normalized splits plus the per-point table of the evaluation split."""
    fields: Dict = {
        "model_kind": config.model_kind,
        "seed": config.seed,
        "num_train": train.size,
        "num_test": 0 if test is None else test.size,
    }
    table = _evaluate_split(outcome, train, "train", fields)
    if test is not None:
        table = _evaluate_split(outcome, test, "test", fields)

    if outcome.objective is not None:
        fields["objective_per_point"] = outcome.objective / train.size
    if outcome.trace:
        last = outcome.trace[-1]
        fields["final_data_fit"] = last.data_fit
        fields["final_complexity"] = last.complexity
        fields["final_mean_abs_corr"] = last.mean_abs_corr
    if outcome.kernel is not None:
        fields["final_sigma_f2"] = outcome.kernel.signal_variance
        if fields.get("final_mean_abs_corr") is None and train.size >= 2:
            fields["final_mean_abs_corr"] = mean_abs_correlation(outcome.kernel, _correlation_inputs(train))
    fields["final_sigma_n2"] = outcome.sigma_n2
    if outcome.chain is not None:
        fields["num_samples"] = len(outcome.chain.samples)
        if outcome.chain.proposals:
            fields["acceptance_rate"] = outcome.chain.acceptance_rate
    return MetricsReport(**fields), table


def _grid(config: ExperimentConfig, train: Dataset) -> np.ndarray:
    lo, hi = float(train.X[:, 0].min()), float(train.X[:, 0].max())
    pad = config.grid_padding * (hi - lo)
    return np.linspace(lo - pad, hi + pad, config.grid_points)[:, None]


def _write_curves(config: ExperimentConfig, outcome: FitOutcome, train: Dataset, out: Path) -> List[str]:
    """Predictive curve and correlation profiles for 1-D regression problems."""
    if train.input_dim != 1 or train.task != "regression" or train.normalization is None:
        return []
    norm = train.normalization
    grid = _grid(config, train)
    x = norm.inverse_x(grid)[:, 0]
    written = []

    pred = outcome.predict_gaussian(grid)
    mean, std = pred.mean, pred.std
    curve = pd.DataFrame(
        {
            "x": x,
            "mean": norm.inverse_y(mean),
            "lo": norm.inverse_y(mean - 2.0 * std),
            "hi": norm.inverse_y(mean + 2.0 * std),
        }
    )
    curve.to_csv(out / "predictive.csv", index=False, float_format=FLOAT_FORMAT)
    written.append("predictive.csv")

    if outcome.kernel is None:
        return written
    if config.reference_points:
        refs = [norm.transform_x(np.array([[r]]))[0] for r in config.reference_points]
    else:
        refs = [np.median(train.X, axis=0)]
    for k, x_ref in enumerate(refs):
        name = "correlation.csv" if k == 0 else f"correlation_{k}.csv"
        rho = correlation_profile(outcome.kernel, x_ref, grid)
        pd.DataFrame({"x": x, "rho": rho}).to_csv(out / name, index=False, float_format=FLOAT_FORMAT)
        written.append(name)
    return written


def write_outputs(
    config: ExperimentConfig,
    outcome: FitOutcome,
    report: MetricsReport,
    predictions: pd.DataFrame,
    train: Dataset,
    out: Path,
) -> List[str]:
    """Write every output file of a run and return their names."""
    out.mkdir(parents=True, exist_ok=True)
    written = ["config.json", "metrics.json", "predictions.csv"]
    (out / "config.json").write_text(config.model_dump_json(indent=2), encoding="utf-8")
    (out / "metrics.json").write_text(report.model_dump_json(indent=2), encoding="utf-8")
    predictions.to_csv(out / "predictions.csv", index=False, float_format=FLOAT_FORMAT)

    if outcome.trace:
        (out / "trace.jsonl").write_text(
            "".join(record.to_json_line() + "\n" for record in outcome.trace), encoding="utf-8"
        )
        written.append("trace.jsonl")
    if outcome.losses:
        pd.DataFrame({"step": np.arange(len(outcome.losses)), "loss": outcome.losses}).to_csv(
            out / "losses.csv", index=False, float_format=FLOAT_FORMAT
        )
        written.append("losses.csv")
    written.extend(_write_curves(config, outcome, train, out))
    if config.save_checkpoint and outcome.params is not None:
        save_checkpoint(out / "params.txt", outcome.params)
        written.append("params.txt")
    if outcome.chain is not None:
        save_chain(outcome.chain, out / "chain")
        written.append("chain")
    logger.info(f"Wrote {len(written)} outputs to {out}")
    return written


def run_experiment(config: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None) -> RunResult:
    """
    Prepare the data, train the configured model, compute metrics and write the outputs.

    Args:
        config: Experiment configuration
        out_dir: Output directory; falls back to ``config.out_dir``, and nothing is written
            when both are unset

    Raises:
        DatasetError: If the data cannot be loaded or split
        ExperimentError: If training or evaluation fails; the message names the model kind
    """
    out_dir = out_dir if out_dir is not None else config.out_dir
    train, test = prepare_data(config)
    runner = ExperimentRunnerRegistry.create_runner(config.model_kind, config)
    logger.info(
        f"Running {config.name}: {config.model_kind} on {train.name} "
        f"(N={train.size}, D={train.input_dim}, seed={config.seed})"
    )

    stream = RandomStream(config.seed)
    try:
        outcome = runner.fit(train, stream)
        report, predictions = build_report(config, outcome, train, test)
    except MODULE_ERRORS as e:
        logger.error(f"{config.model_kind} run failed (seed {config.seed}): {e}")
        raise ExperimentError(f"{config.model_kind} run failed (seed {config.seed}): {e}") from e

    files: List[str] = []
    if out_dir is not None:
        try:
            files = write_outputs(config, outcome, report, predictions, train, Path(out_dir))
        except (OSError, KernelError, CheckpointError) as e:
            raise ExperimentError(f"Cannot write outputs to {out_dir}: {e}") from e
    logger.info(
        f"{config.model_kind} finished: objective/N={report.objective_per_point}, "
        f"test_ll={report.test_ll}, test_rmse={report.test_rmse}"
    )
    return RunResult(
        config=config,
        report=report,
        trace=outcome.trace,
        out_dir=None if out_dir is None else str(out_dir),
        files=files,
    )


def diagnose_correlation(config: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None) -> CorrelationDiagnosis:
    """
    Fit an SE and a deep-kernel exact GP on the same data and compare how strongly
    each trained prior correlates the training inputs.

    Each fit writes its outputs (including correlation profiles) to ``se/`` and ``dkl/``
    under ``out_dir``; the comparison goes to ``correlation_summary.json``.
    """
    out = Path(out_dir) if out_dir is not None else (Path(config.out_dir) if config.out_dir else None)
    se_config = config.model_copy(update={"model_kind": "exact-se", "freeze_net": False})
    dkl_kind = "exact-fdkl" if config.frozen_net else "exact-dkl"
    dkl_config = config.model_copy(update={"model_kind": dkl_kind})
    se = run_experiment(se_config, None if out is None else out / "se")
    dkl = run_experiment(dkl_config, None if out is None else out / "dkl")

    diagnosis = CorrelationDiagnosis(
        se_mean_abs_corr=se.report.final_mean_abs_corr,
        dkl_mean_abs_corr=dkl.report.final_mean_abs_corr,
        se_objective_per_point=se.report.objective_per_point,
        dkl_objective_per_point=dkl.report.objective_per_point,
        se_test_ll=se.report.test_ll,
        dkl_test_ll=dkl.report.test_ll,
        over_correlated=dkl.report.final_mean_abs_corr > se.report.final_mean_abs_corr,
    )
    logger.info(
        f"Mean |corr|: SE={diagnosis.se_mean_abs_corr:.4f}, DKL={diagnosis.dkl_mean_abs_corr:.4f} "
        f"(over-correlated: {diagnosis.over_correlated})"
    )
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "correlation_summary.json").write_text(diagnosis.model_dump_json(indent=2), encoding="utf-8")
    return diagnosis


def evaluate_predictions(path: Union[str, Path]) -> Dict[str, float]:
    """
    Recompute metrics from a ``predictions.csv`` written by :func:`run_experiment`.

    Regression tables (``y, mean, var``, plus ``log_density`` for sampler runs) give RMSE and
    mean log likelihood; classification tables (``label, p_0 .. p_{C-1}``) give accuracy, log
    likelihood, ECE and the incorrect-only log likelihood.

    Raises:
        DatasetError: If the file is missing or has neither layout
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"No such file: {path}")
    table = pd.read_csv(path)
    if {"y", "mean", "var"} <= set(table.columns):
        y, mean, var = (table[c].to_numpy(dtype=np.float64) for c in ("y", "mean", "var"))
        if "log_density" in table.columns:
            return {"rmse": rmse(mean, y), "ll": float(table["log_density"].mean())}
        return {"rmse": rmse(mean, y), "ll": mean_gaussian_ll(mean, var, y)}
    prob_columns = sorted((c for c in table.columns if c.startswith("p_")), key=lambda c: int(c[2:]))
    if "label" in table.columns and prob_columns:
        labels = table["label"].to_numpy(dtype=np.int64)
        probs = table[prob_columns].to_numpy(dtype=np.float64)
        value, empty = incorrect_only_ll(probs, labels)
        return {
            "accuracy": accuracy(probs, labels),
            "ll": mean_log_prob(probs, labels),
            "ece": ece(probs, labels),
            "incorrect_ll": value,
            "incorrect_ll_empty": float(empty),
        }
    raise DatasetError(f"{path} is not a predictions table; columns: {list(table.columns)}")
