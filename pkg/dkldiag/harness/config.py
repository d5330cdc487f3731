"""
Experiment configuration: a single JSON document whose every field has a default.

A minimal config names only the dataset and the model kind::

    {"model_kind": "exact-dkl", "dataset": {"source": "toy"}}
"""

import logging
from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..autodiff import OptSchedule
from ..models.feature_net import NetSpec
from ..models.svgp import MAX_INDUCING
from ..samplers import HmcConfig, PotentialSpec, SgldConfig

logger = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "DatasetConfig",
    "ExperimentConfig",
    "apply_overrides",
    "MODEL_KINDS",
    "load_config",
]

EXACT_KINDS = ("exact-se", "exact-dkl", "exact-fdkl")
VARIATIONAL_KINDS = ("svgp", "vdkl", "svdkl", "fsvdkl")
SAMPLER_KINDS = ("hmc-dkl", "sgld-svdkl")
MODEL_KINDS = EXACT_KINDS + VARIATIONAL_KINDS + ("nn",) + SAMPLER_KINDS


class ConfigError(Exception):
    """Raised when a config file cannot be read or is inconsistent."""


class DatasetConfig(BaseModel):
    """Where the data comes from and how it is split."""

    source: Literal["toy", "snelson", "csv", "friedman", "blobs"] = Field(
        default="toy", description="Built-in synthetic task or a file format"
    )
    path: Optional[str] = Field(default=None, description="Data file for the snelson and csv sources")
    target: Optional[Union[str, int]] = Field(default=None, description="CSV target column (name or index)")
    task: Literal["regression", "classification"] = Field(default="regression")
    size: int = Field(default=200, ge=2, description="Number of generated points for synthetic sources")
    noise: Optional[float] = Field(default=None, ge=0, description="Noise level of synthetic regression sources")
    num_features: int = Field(default=5, ge=1, description="Input width of the friedman and blobs sources")
    num_classes: int = Field(default=2, ge=2, description="Classes of the blobs source")
    subsample: Optional[int] = Field(default=None, ge=2, description="Keep a random subset of this many points")
    test_fraction: Optional[float] = Field(
        default=0.1, gt=0, lt=1, description="Held-out fraction; null trains on everything"
    )
    data_seed: int = Field(default=0, ge=0, description="Seed of synthetic sources (fixed across run seeds)")
    split_seed: Optional[int] = Field(default=None, ge=0, description="Split seed (the run seed when omitted)")

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def _check_source(self) -> "DatasetConfig":
        if self.source in ("snelson", "csv") and not self.path:
            raise ValueError(f"Dataset source {self.source!r} needs a path")
        if self.source == "blobs" and self.task != "classification":
            self.task = "classification"
        if self.source in ("toy", "snelson", "friedman") and self.task != "regression":
            raise ValueError(f"Dataset source {self.source!r} is a regression task")
        return self


class ExperimentConfig(BaseModel):
    """Model, training schedule, sampler settings and outputs of one experiment."""

    name: str = Field(default="experiment", description="Run name used in logs and reports")
    model_kind: str = Field(
        default="exact-se",
        pattern="^(" + "|".join(MODEL_KINDS) + ")$",
        description="exact-se, exact-dkl, exact-fdkl, svgp, vdkl, svdkl, fsvdkl, nn, hmc-dkl or sgld-svdkl",
    )
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    net: NetSpec = Field(default_factory=NetSpec, description="Feature extractor (input_dim follows the data)")
    shared_lengthscale: bool = Field(default=False, description="One lengthscale for all dimensions instead of ARD")
    init_log_sigma_f2: float = Field(default=0.0, description="Initial log signal variance")
    init_log_lengthscale: float = Field(default=0.0, description="Initial log squared lengthscale")
    init_log_sigma_n2: Optional[float] = Field(
        default=None, description="Initial log noise variance (model default when omitted)"
    )
    schedule: OptSchedule = Field(
        default_factory=lambda: OptSchedule(steps=10000, lr=1e-3), description="Training schedule"
    )
    pretrain: OptSchedule = Field(
        default_factory=lambda: OptSchedule(steps=2000, lr=1e-3),
        description="Network pretraining for fdkl, fsvdkl and the nn baseline",
    )
    batch_size: Optional[int] = Field(default=None, ge=1, description="Minibatch size (full batch when omitted)")
    num_inducing: int = Field(default=64, ge=1, le=MAX_INDUCING, description="Inducing points M")
    kmeans_subset: Optional[int] = Field(default=10000, ge=1, description="Cluster at most this many points")
    mc_samples: int = Field(default=10, ge=1, description="Monte Carlo samples for softmax likelihoods")
    freeze_net: bool = Field(default=False, description="Keep the feature extractor fixed during training")
    weight_decay: float = Field(
        default=0.0, ge=0, description="L2 coefficient on network weight matrices only"
    )
    seed: int = Field(default=0, ge=0, le=2**64 - 1, description="Run seed")
    warm_start_steps: Optional[int] = Field(
        default=None,
        ge=0,
        description="Adam steps on the point estimate before sampling (hmc-dkl: 0, sgld-svdkl: the schedule)",
    )
    hmc: HmcConfig = Field(default_factory=HmcConfig)
    sgld: SgldConfig = Field(default_factory=SgldConfig)
    prior: PotentialSpec = Field(default_factory=PotentialSpec, description="Gaussian prior of sampled parameters")
    grid_points: int = Field(default=200, ge=2, description="Points of the 1-D predictive curve")
    grid_padding: float = Field(default=0.5, ge=0, description="Grid extension beyond the data, as a range fraction")
    reference_points: List[float] = Field(
        default_factory=list, description="1-D correlation profile references (the train median when empty)"
    )
    save_checkpoint: bool = Field(default=True, description="Write the trained parameters to params.txt")
    out_dir: Optional[str] = Field(default=None, description="Output directory (CLI --out overrides)")

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def _check_kind(self) -> "ExperimentConfig":
        if self.dataset.task == "classification" and self.model_kind in EXACT_KINDS + ("hmc-dkl",):
            raise ValueError(f"{self.model_kind} needs a Gaussian likelihood; use a variational kind")
        if self.model_kind in ("exact-se", "svgp") and self.freeze_net:
            raise ValueError(f"{self.model_kind} has no feature extractor to freeze")
        if self.model_kind == "vdkl" and self.batch_size is not None:
            raise ValueError("vdkl trains on the full batch; use svdkl for minibatches")
        return self

    @property
    def is_deep(self) -> bool:
        return self.model_kind not in ("exact-se", "svgp")

    @property
    def frozen_net(self) -> bool:
        return self.freeze_net or self.model_kind in ("exact-fdkl", "fsvdkl")

    @property
    def minibatched(self) -> bool:
        return self.model_kind in ("svdkl", "fsvdkl", "sgld-svdkl") or (
            self.model_kind == "svgp" and self.batch_size is not None
        )


def apply_overrides(config: ExperimentConfig, **overrides) -> ExperimentConfig:
    """
    Validated copy of ``config`` with top-level fields replaced; ``None`` values are ignored.

    Raises:
        ConfigError: If the result fails validation
    """
    updates = {k: v for k, v in overrides.items() if v is not None}
    if not updates:
        return config
    unknown = set(updates) - set(ExperimentConfig.model_fields)
    if unknown:
        raise ConfigError(f"Unknown config fields: {sorted(unknown)}")
    try:
        updated = ExperimentConfig.model_validate({**config.model_dump(exclude_unset=True), **updates})
    except ValidationError as e:
        raise ConfigError(f"Invalid config override {updates}: {e}") from e
    return updated


def load_config(path: Union[str, Path], **overrides) -> ExperimentConfig:
    """
    Read a JSON config and apply field overrides.

    Raises:
        ConfigError: If the file is missing or fails validation
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"No such config file: {path}")
    try:
        config = ExperimentConfig.model_validate_json(path.read_text())
    except ValidationError as e:
        raise ConfigError(f"Invalid config {path}: {e}") from e
    config = apply_overrides(config, **overrides)
    logger.debug(f"Loaded config {path}: {config.model_kind} on {config.dataset.source}")
    return config
