"""
Dataset ingestion, train/test splitting with train-only normalization, and synthetic tasks.
"""

import logging
from pathlib import Path
from typing import Literal, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from sklearn.datasets import make_blobs, make_friedman1

from ..core.random import RandomStream

logger = logging.getLogger(__name__)

__all__ = [
    "DatasetError",
    "Normalization",
    "Dataset",
    "load_dataset",
    "split_and_normalize",
    "normalize_only",
    "subsample",
    "make_toy_regression",
    "make_synthetic_regression",
    "make_blob_classification",
]

Task = Literal["regression", "classification"]


class DatasetError(Exception):
    """Raised when a dataset cannot be parsed or split; carries the offending line if known."""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class Normalization(BaseModel):
    """Train-split statistics applied to both splits."""

    x_mean: np.ndarray = Field(..., description="Per-column input means")
    x_std: np.ndarray = Field(..., description="Per-column input standard deviations (0 for constant columns)")
    y_mean: float = Field(default=0.0, description="Target mean (0 for classification)")
    y_std: float = Field(default=1.0, description="Target standard deviation (1 for classification)")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    def transform_x(self, X: np.ndarray) -> np.ndarray:
        safe = np.where(self.x_std > 0, self.x_std, 1.0)
        return np.where(self.x_std > 0, (X - self.x_mean) / safe, 0.0)

    def inverse_x(self, X: np.ndarray) -> np.ndarray:
        return X * self.x_std + self.x_mean

    def inverse_y(self, y: np.ndarray) -> np.ndarray:
        return y * self.y_std + self.y_mean

    def inverse_var(self, var: np.ndarray) -> np.ndarray:
        return var * self.y_std**2


class Dataset(BaseModel):
    """Inputs, targets and (after splitting) the normalization that produced them."""

    X: np.ndarray = Field(..., description="Inputs (N x D)")
    y: np.ndarray = Field(..., description="Float targets or integer labels (N)")
    name: str = Field(default="dataset")
    task: Task = Field(default="regression")
    normalization: Optional[Normalization] = Field(None, description="Set on normalized splits")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="after")
    def _check_arrays(self) -> "Dataset":
        if self.X.ndim != 2:
            raise DatasetError(f"Inputs must be a matrix, got shape {self.X.shape}")
        if self.y.ndim != 1 or self.y.shape[0] != self.X.shape[0]:
            raise DatasetError(f"Targets shape {self.y.shape} does not match {self.X.shape[0]} inputs")
        if np.isnan(self.X).any() or np.isnan(self.y.astype(np.float64)).any():
            raise DatasetError("Dataset contains NaNs")
        return self

    @property
    def size(self) -> int:
        return self.X.shape[0]

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.y.max()) + 1 if self.task == "classification" and self.size else 0

    def take(self, rows: np.ndarray, name: Optional[str] = None) -> "Dataset":
        return self.model_copy(update={"X": self.X[rows], "y": self.y[rows], "name": name or self.name})


def _first_bad_row(frame: pd.DataFrame) -> Optional[int]:
    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1).to_numpy()
    return int(np.argmax(bad)) if bad.any() else None


def load_dataset(
    path: Union[str, Path],
    format: Literal["csv", "snelson"] = "csv",
    target: Optional[Union[str, int]] = None,
    task: Task = "regression",
    name: Optional[str] = None,
) -> Dataset:
    """
    Load raw (unnormalized) data.

    ``csv`` files have a header row; ``target`` names the target column (default: the last).
    ``snelson`` files are whitespace-separated ``x y`` pairs without a header.

    Raises:
        DatasetError: If the file is missing, empty, non-numeric (with line number) or lacks
            the target column
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"No such file: {path}")
    header_lines = 1 if format == "csv" else 0
    try:
        if format == "csv":
            frame = pd.read_csv(path, dtype=str, skip_blank_lines=True)
        else:
            frame = pd.read_csv(path, sep=r"\s+", header=None, dtype=str, comment="#")
    except pd.errors.EmptyDataError as e:
        raise DatasetError(f"{path} is empty", line=1) from e
    except pd.errors.ParserError as e:
        raise DatasetError(f"Cannot parse {path}: {e}") from e
    if frame.empty:
        raise DatasetError(f"{path} has no data rows", line=header_lines + 1)

    if format == "snelson" and frame.shape[1] != 2:
        raise DatasetError(f"Expected two columns in {path}, found {frame.shape[1]}")

    bad = _first_bad_row(frame)
    if bad is not None:
        raise DatasetError(f"Non-numeric value in {path}", line=bad + header_lines + 1)

    if target is None:
        target_col = frame.columns[-1]
    elif isinstance(target, int):
        if not -frame.shape[1] <= target < frame.shape[1]:
            raise DatasetError(f"Target column index {target} out of range for {frame.shape[1]} columns")
        target_col = frame.columns[target]
    else:
        if target not in frame.columns:
            raise DatasetError(f"Missing target column {target!r} in {path}; columns: {list(frame.columns)}")
        target_col = target

    values = frame.apply(pd.to_numeric)
    X = values.drop(columns=[target_col]).to_numpy(dtype=np.float64)
    y = values[target_col].to_numpy(dtype=np.float64)
    if task == "classification":
        if not np.all(np.mod(y, 1) == 0) or y.min() < 0:
            raise DatasetError("Classification labels must be non-negative integers")
        y = y.astype(np.int64)
    logger.info(f"Loaded {path} ({format}): N={X.shape[0]}, D={X.shape[1]}")
    return Dataset(X=X, y=y, name=name or path.stem, task=task)


def split_and_normalize(dataset: Dataset, test_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """
    Shuffle, split and normalize using train-split statistics only.

    Constant input columns map to 0. Classification labels are left untouched.

    Raises:
        DatasetError: If the fraction is outside (0, 1) or either split would be empty
    """
    if not 0 < test_fraction < 1:
        raise DatasetError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = dataset.size
    n_test = int(round(n * test_fraction))
    if n_test < 1 or n_test > n - 1:
        raise DatasetError(f"Cannot split {n} points with test_fraction={test_fraction}")
    order = RandomStream(seed).split(0).permutation(n)
    test_rows, train_rows = order[:n_test], order[n_test:]
    X_train, X_test = dataset.X[train_rows], dataset.X[test_rows]
    y_train, y_test = dataset.y[train_rows], dataset.y[test_rows]

    x_mean = X_train.mean(axis=0)
    x_std = X_train.std(axis=0, ddof=0)
    if dataset.task == "regression":
        y_mean = float(y_train.mean())
        y_std = float(y_train.std(ddof=0))
        y_std = y_std if y_std > 0 else 1.0
    else:
        y_mean, y_std = 0.0, 1.0
    norm = Normalization(x_mean=x_mean, x_std=x_std, y_mean=y_mean, y_std=y_std)

    def _apply(X, y, suffix):
        y_out = (y - y_mean) / y_std if dataset.task == "regression" else y
        return Dataset(
            X=norm.transform_x(X),
            y=y_out,
            name=f"{dataset.name}-{suffix}",
            task=dataset.task,
            normalization=norm,
        )

    logger.debug(f"Split {dataset.name}: train={n - n_test}, test={n_test}")
    return _apply(X_train, y_train, "train"), _apply(X_test, y_test, "test")


def normalize_only(dataset: Dataset) -> Dataset:
    """Normalize the whole dataset with its own statistics (no test split)."""
    x_mean = dataset.X.mean(axis=0)
    x_std = dataset.X.std(axis=0, ddof=0)
    if dataset.task == "regression":
        y_mean, y_std = float(dataset.y.mean()), float(dataset.y.std(ddof=0)) or 1.0
        y = (dataset.y - y_mean) / y_std
    else:
        y_mean, y_std, y = 0.0, 1.0, dataset.y
    norm = Normalization(x_mean=x_mean, x_std=x_std, y_mean=y_mean, y_std=y_std)
    return dataset.model_copy(update={"X": norm.transform_x(dataset.X), "y": y, "normalization": norm})


def subsample(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Random subset of ``n`` rows in their original order."""
    if not 1 <= n <= dataset.size:
        raise DatasetError(f"Cannot take {n} of {dataset.size} points")
    rows = np.sort(RandomStream(seed).split(1).permutation(dataset.size)[:n])
    return dataset.take(rows, name=f"{dataset.name}-sub{n}")


def make_toy_regression(n: int = 200, seed: int = 0, noise: float = 0.3) -> Dataset:
    """
    Snelson-like 1-D regression stand-in: inputs on [0, 6], a smooth oscillating signal
    with input-dependent amplitude, and Gaussian noise.
    """
    stream = RandomStream(seed).split(2)
    x = np.sort(stream.uniform(n, 0.0, 6.0))
    f = np.sin(2.5 * x) * (1.0 + 0.25 * x) - 0.4 * x + 1.0
    y = f + noise * stream.normal(n)
    return Dataset(X=x[:, None], y=y, name="toy", task="regression")


def make_synthetic_regression(n: int = 500, seed: int = 0, num_features: int = 5, noise: float = 1.0) -> Dataset:
    """Friedman #1 regression: ``10 sin(pi x1 x2) + 20 (x3 - 1/2)^2 + 10 x4 + 5 x5 + noise``."""
    X, y = make_friedman1(n_samples=n, n_features=num_features, noise=noise, random_state=seed)
    return Dataset(X=np.asarray(X, dtype=np.float64), y=np.asarray(y, dtype=np.float64), name="friedman1")


def make_blob_classification(
    n: int = 200, seed: int = 0, num_classes: int = 2, num_features: int = 2, cluster_std: float = 1.0
) -> Dataset:
    """Isotropic Gaussian blobs, one per class."""
    X, y = make_blobs(
        n_samples=n, n_features=num_features, centers=num_classes, cluster_std=cluster_std, random_state=seed
    )
    return Dataset(
        X=np.asarray(X, dtype=np.float64), y=np.asarray(y, dtype=np.int64), name="blobs", task="classification"
    )
