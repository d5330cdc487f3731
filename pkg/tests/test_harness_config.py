"""
Unit tests for experiment configuration and the runner registry.
"""

import json
from pathlib import Path

import pytest

from dkldiag.autodiff import OptSchedule
from dkldiag.harness import (
    MODEL_KINDS,
    BaseRunner,
    ConfigError,
    DatasetConfig,
    ExperimentConfig,
    ExperimentError,
    ExperimentRunnerRegistry,
    FitOutcome,
    apply_overrides,
    load_config,
)
from dkldiag.harness.registry import BUILTIN_RUNNERS
from dkldiag.harness.runners import ExactGpRunner, HmcRunner, NnRunner, SgldRunner, SvgpRunner
from dkldiag.models import NetSpec


def _write(tmp_path: Path, payload) -> Path:
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload))
    return path


@pytest.mark.unit
class TestExperimentConfig:
    """Defaults, validation and overrides."""

    def test_minimal_config_uses_defaults(self, tmp_path):
        """A config naming only the kind and dataset fills in everything else."""
        config = load_config(_write(tmp_path, {"model_kind": "exact-dkl", "dataset": {"source": "toy"}}))

        assert config.model_kind == "exact-dkl"
        assert config.net.hidden_widths == [100, 50]
        assert config.schedule.steps == 10000
        assert config.dataset.test_fraction == pytest.approx(0.1)
        assert config.is_deep and not config.frozen_net and not config.minibatched

    def test_overrides_apply_and_ignore_none(self, tmp_path):
        """Overrides replace fields; None leaves the file's value."""
        path = _write(tmp_path, {"model_kind": "svdkl", "seed": 3})
        config = load_config(path, seed=7, batch_size=None)

        assert config.seed == 7
        assert config.batch_size is None
        assert config.minibatched
        assert apply_overrides(config) is config

    def test_override_keeps_unset_defaults(self):
        """Overriding one field leaves the other explicit fields intact."""
        config = ExperimentConfig(model_kind="exact-fdkl", dataset=DatasetConfig(source="friedman", size=50))
        updated = apply_overrides(config, seed=11)

        assert updated.model_kind == "exact-fdkl"
        assert updated.dataset.source == "friedman"
        assert updated.frozen_net

    def test_invalid_configs(self, tmp_path):
        """Unknown kinds and fields, missing paths and inconsistent kinds raise ConfigError."""
        with pytest.raises(ConfigError):
            load_config(_write(tmp_path, {"model_kind": "gp"}))
        with pytest.raises(ConfigError):
            load_config(_write(tmp_path, {"learning_rate": 0.1}))
        with pytest.raises(ConfigError):
            load_config(_write(tmp_path, {"dataset": {"source": "csv"}}))
        with pytest.raises(ConfigError):
            load_config(_write(tmp_path, {"model_kind": "exact-dkl", "dataset": {"source": "blobs"}}))
        with pytest.raises(ConfigError):
            load_config(_write(tmp_path, {"model_kind": "vdkl", "batch_size": 32}))
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.json")
        with pytest.raises(ConfigError):
            apply_overrides(ExperimentConfig(), learning_rate=0.1)

    def test_blobs_source_is_classification(self):
        """The blobs source always describes a classification task."""
        assert DatasetConfig(source="blobs").task == "classification"


@pytest.mark.unit
class TestRunnerRegistry:
    """Dispatch from model kinds to runners."""

    def test_every_kind_has_a_runner(self):
        """Each configurable kind maps to its built-in runner."""
        expected = {
            "exact-se": ExactGpRunner,
            "exact-dkl": ExactGpRunner,
            "exact-fdkl": ExactGpRunner,
            "svgp": SvgpRunner,
            "vdkl": SvgpRunner,
            "svdkl": SvgpRunner,
            "fsvdkl": SvgpRunner,
            "nn": NnRunner,
            "hmc-dkl": HmcRunner,
            "sgld-svdkl": SgldRunner,
        }

        assert set(expected) == set(MODEL_KINDS)
        for kind, runner in expected.items():
            assert ExperimentRunnerRegistry.get_runner(kind) is runner
        assert set(MODEL_KINDS) <= set(ExperimentRunnerRegistry.get_available_kinds())

    def test_create_runner_sets_kind(self):
        """create_runner copies the config with the requested kind and known overrides."""
        runner = ExperimentRunnerRegistry.create_runner("svdkl", ExperimentConfig(), batch_size=32, unknown=1)

        assert isinstance(runner, SvgpRunner)
        assert runner.config.model_kind == "svdkl"
        assert runner.config.batch_size == 32

    def test_create_runner_validates_overrides(self):
        """Overrides go through validation; out-of-range or inconsistent values raise ExperimentError."""
        with pytest.raises(ExperimentError):
            ExperimentRunnerRegistry.create_runner("svdkl", ExperimentConfig(), batch_size=0)
        with pytest.raises(ExperimentError):
            ExperimentRunnerRegistry.create_runner("exact-se", ExperimentConfig(), freeze_net=True)
        with pytest.raises(ExperimentError):
            ExperimentRunnerRegistry.create_runner("vdkl", ExperimentConfig(batch_size=16))

    def test_builtin_runners_registered_once(self):
        """Every built-in runner is registered under exactly its own kinds."""
        for runner in BUILTIN_RUNNERS:
            for kind in runner.kinds:
                assert ExperimentRunnerRegistry.get_runner(kind) is runner
        assert sum(len(runner.kinds) for runner in BUILTIN_RUNNERS) == len(MODEL_KINDS)

    def test_unknown_kind(self):
        """Kinds without a runner raise ExperimentError."""
        with pytest.raises(ExperimentError):
            ExperimentRunnerRegistry.create_runner("does-not-exist")

    def test_runner_rejects_foreign_kind(self):
        """A runner refuses configs for kinds it does not handle."""
        with pytest.raises(ExperimentError):
            NnRunner(config=ExperimentConfig(model_kind="exact-se"))

    def test_register_custom_runner(self):
        """Custom BaseRunner subclasses can be registered; other classes cannot."""

        class ConstantRunner(BaseRunner):
            kinds = ("constant",)

            def fit(self, train, stream):
                return FitOutcome()

        try:
            ExperimentRunnerRegistry.register_runner("constant", ConstantRunner)
            assert ExperimentRunnerRegistry.get_runner("constant") is ConstantRunner
            assert isinstance(ExperimentRunnerRegistry.create_runner("constant"), ConstantRunner)
        finally:
            ExperimentRunnerRegistry._runners.pop("constant", None)

        with pytest.raises(ValueError):
            ExperimentRunnerRegistry.register_runner("constant", dict)

    def test_weight_decay_targets_network_weights(self):
        """Weight decay covers every weight matrix of the net and nothing else."""
        config = ExperimentConfig(model_kind="exact-dkl", weight_decay=1e-4, net=NetSpec(hidden_widths=[8, 4]))
        schedule = ExactGpRunner(config=config)._schedule(OptSchedule(steps=5))

        assert schedule.weight_decay == {"net.layer0.W": 1e-4, "net.layer1.W": 1e-4, "net.layer2.W": 1e-4}
        se = ExactGpRunner(config=ExperimentConfig(model_kind="exact-se", weight_decay=1e-4))
        assert se._schedule(OptSchedule(steps=5)).weight_decay == {}
