"""
End-to-end tests of the experiment driver on small synthetic problems.
"""

import asyncio
import json
import os
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest

from dkldiag.autodiff import OptSchedule
from dkldiag.harness import (
    Dataset,
    DatasetConfig,
    DatasetError,
    ExperimentConfig,
    ExperimentError,
    compare_minibatch_regularization,
    diagnose_correlation,
    evaluate_predictions,
    prepare_data,
    run_experiment,
)
from dkldiag.harness.experiment import build_report
from dkldiag.harness.runners import ExactGpRunner, FitOutcome
from dkldiag.models import NetSpec, TrainingDivergedError
from dkldiag.samplers import HmcConfig, MixturePredictive, SgldConfig, load_chain

SMALL_NET = NetSpec(hidden_widths=[8], feature_dim=2)


def _toy_config(kind: str = "exact-se", steps: int = 30, **kwargs) -> ExperimentConfig:
    return ExperimentConfig(
        model_kind=kind,
        dataset=DatasetConfig(source="toy", size=40),
        net=SMALL_NET,
        schedule=OptSchedule(steps=steps, lr=0.05),
        pretrain=OptSchedule(steps=10, lr=0.01),
        grid_points=25,
        **kwargs,
    )


def _blobs_config(kind: str = "svgp", **kwargs) -> ExperimentConfig:
    return ExperimentConfig(
        model_kind=kind,
        dataset=DatasetConfig(source="blobs", size=60, num_classes=3, num_features=2),
        net=SMALL_NET,
        schedule=OptSchedule(steps=20, lr=0.05),
        num_inducing=8,
        mc_samples=3,
        **kwargs,
    )


@pytest.mark.unit
class TestPrepareData:
    """Dataset construction from the config."""

    def test_split_follows_run_seed(self):
        """Without a split seed the run seed picks the split."""
        a, _ = prepare_data(_toy_config(seed=1))
        b, _ = prepare_data(_toy_config(seed=2))

        assert (a.size, b.size) == (36, 36)
        assert not np.array_equal(a.X, b.X)

    def test_no_test_split(self):
        """test_fraction null trains on everything."""
        config = _toy_config().model_copy(
            update={"dataset": DatasetConfig(source="toy", size=40, test_fraction=None, subsample=20)}
        )
        train, test = prepare_data(config)

        assert test is None
        assert train.size == 20

    def test_csv_source(self, tmp_path):
        """CSV datasets load through the configured path and target."""
        path = tmp_path / "data.csv"
        rows = "\n".join(f"{i},{2 * i}" for i in range(20))
        path.write_text("x,y\n" + rows + "\n")
        config = _toy_config().model_copy(
            update={"dataset": DatasetConfig(source="csv", path=str(path), target="y", test_fraction=0.25)}
        )
        train, test = prepare_data(config)

        assert (train.size, test.size) == (15, 5)

    def test_missing_file(self, tmp_path):
        """A missing data file surfaces as DatasetError."""
        config = _toy_config().model_copy(
            update={"dataset": DatasetConfig(source="snelson", path=str(tmp_path / "nope"))}
        )
        with pytest.raises(DatasetError):
            run_experiment(config)


@pytest.mark.unit
class TestRunExperiment:
    """Training, metrics and output files per model family."""

    def test_exact_se_outputs(self, tmp_path):
        """An exact SE run writes every file and its metrics can be recomputed."""
        result = run_experiment(_toy_config(), tmp_path)
        report = result.report

        expected = ["config.json", "metrics.json", "predictions.csv", "trace.jsonl", "predictive.csv"]
        for name in expected + ["correlation.csv", "params.txt"]:
            assert (tmp_path / name).exists(), name
        assert (report.num_train, report.num_test) == (36, 4)
        assert len((tmp_path / "trace.jsonl").read_text().splitlines()) == 31
        assert report.objective_per_point == pytest.approx(result.trace[-1].total / 36)
        assert 0.0 <= report.final_mean_abs_corr <= 1.0

        recomputed = evaluate_predictions(tmp_path / "predictions.csv")
        assert recomputed["rmse"] == pytest.approx(report.test_rmse)
        assert recomputed["ll"] == pytest.approx(report.test_ll)

        curve = pd.read_csv(tmp_path / "predictive.csv")
        assert list(curve.columns) == ["x", "mean", "lo", "hi"]
        assert len(curve) == 25
        assert np.all(curve["lo"] <= curve["mean"]) and np.all(curve["mean"] <= curve["hi"])
        rho = pd.read_csv(tmp_path / "correlation.csv")["rho"]
        assert rho.max() <= 1.0 + 1e-12

    def test_runs_are_deterministic(self, tmp_path):
        """The same config and seed reproduce identical metrics and traces."""
        run_experiment(_toy_config(steps=10), tmp_path / "a")
        run_experiment(_toy_config(steps=10), tmp_path / "b")

        for name in ("metrics.json", "trace.jsonl", "params.txt"):
            assert (tmp_path / "a" / name).read_text() == (tmp_path / "b" / name).read_text()

    def test_nothing_written_without_out_dir(self):
        """Runs without an output directory only return the report."""
        result = run_experiment(_toy_config(steps=5))

        assert result.out_dir is None
        assert result.files == []

    def test_exact_dkl_and_frozen_variant(self, tmp_path):
        """Deep-kernel runs train; the frozen variant pretrains and keeps the net fixed."""
        dkl = run_experiment(_toy_config("exact-dkl", steps=10), tmp_path / "dkl")
        fdkl = run_experiment(_toy_config("exact-fdkl", steps=10), tmp_path / "fdkl")

        assert dkl.report.test_rmse is not None
        assert fdkl.report.final_sigma_n2 > 0
        assert (tmp_path / "fdkl" / "params.txt").exists()

    def test_svgp_classification(self, tmp_path):
        """Softmax SVGP runs report accuracy and calibration, recomputable from predictions."""
        result = run_experiment(_blobs_config(), tmp_path)
        report = result.report

        assert report.test_accuracy is not None and report.test_ece is not None
        assert report.test_rmse is None and report.final_sigma_n2 is None
        table = pd.read_csv(tmp_path / "predictions.csv")
        assert list(table.columns) == ["label", "p_0", "p_1", "p_2"]
        recomputed = evaluate_predictions(tmp_path / "predictions.csv")
        assert recomputed["ece"] == pytest.approx(report.test_ece)
        assert recomputed["accuracy"] == pytest.approx(report.test_accuracy)
        assert not (tmp_path / "predictive.csv").exists()

    def test_minibatched_svdkl_regression(self, tmp_path):
        """SVDKL trains on minibatches and records ELBO terms in the trace."""
        result = run_experiment(_toy_config("svdkl", steps=10, batch_size=8, num_inducing=6), tmp_path)
        lines = [json.loads(line) for line in (tmp_path / "trace.jsonl").read_text().splitlines()]

        assert len(lines) == 11
        assert {"elbo", "expected_ll", "kl"} <= set(lines[0])
        assert lines[-1]["step"] == 10
        assert result.report.objective_per_point == pytest.approx(lines[-1]["elbo"] / 36)
        assert result.report.final_sigma_n2 > 0

    def test_nn_baseline(self, tmp_path):
        """The network baseline writes a loss curve and no checkpoint."""
        result = run_experiment(_toy_config("nn", steps=15), tmp_path)
        losses = pd.read_csv(tmp_path / "losses.csv")

        assert list(losses.columns) == ["step", "loss"]
        assert len(losses) == 15
        assert not (tmp_path / "params.txt").exists()
        assert result.report.final_sigma_n2 > 0

    def test_hmc_run_saves_chain(self, tmp_path):
        """HMC runs keep their samples and report the acceptance rate."""
        hmc = HmcConfig(step_size=0.005, leapfrog_steps=3, burn_in=2, samples=4, thin=1)
        config = _toy_config("hmc-dkl", hmc=hmc)
        result = run_experiment(config, tmp_path)

        assert result.report.num_samples == 4
        assert 0.0 <= result.report.acceptance_rate <= 1.0
        assert len(load_chain(tmp_path / "chain").samples) == 4
        assert len(result.trace) == 4
        table = pd.read_csv(tmp_path / "predictions.csv")
        assert "log_density" in table.columns
        assert result.report.test_ll == pytest.approx(table["log_density"].mean())
        assert evaluate_predictions(tmp_path / "predictions.csv")["ll"] == pytest.approx(result.report.test_ll)

    def test_sgld_run(self, tmp_path):
        """SGLD runs warm start, then sample with minibatches."""
        config = _toy_config(
            "sgld-svdkl",
            steps=5,
            batch_size=12,
            num_inducing=6,
            sgld=SgldConfig(lr0=1e-5, burn_in_epochs=1, sample_epochs=2, sample_every=1),
        )
        result = run_experiment(config, tmp_path)

        assert result.report.num_samples == 2
        assert result.report.acceptance_rate is None
        assert (tmp_path / "chain" / "manifest.json").exists()

    def test_training_failure_names_the_kind(self):
        """Module errors during training become ExperimentError naming the model kind."""
        with patch.object(ExactGpRunner, "fit", side_effect=TrainingDivergedError("diverged", [])):
            with pytest.raises(ExperimentError, match="exact-se"):
                run_experiment(_toy_config(steps=5))


@pytest.mark.unit
class TestMixtureScoring:
    """Sampler runs are scored with the averaged per-sample densities."""

    @staticmethod
    def _two_component_outcome() -> FitOutcome:
        def mixture(X_star):
            n = X_star.shape[0]
            return MixturePredictive(
                component_means=np.array([np.full(n, -1.0), np.full(n, 1.0)]),
                component_vars=np.full((2, n), 0.01),
            )

        return FitOutcome(predict_mixture=mixture, predict_gaussian=lambda X_star: mixture(X_star).as_gaussian())

    def test_test_ll_averages_component_densities(self):
        """Two narrow components at -1 and 1 give log(0.5 N(1 | 1, 0.01)) at y = 1, not the moment-matched value."""
        split = Dataset(X=np.zeros((3, 1)), y=np.ones(3))
        report, table = build_report(_toy_config("hmc-dkl"), self._two_component_outcome(), split, split)
        expected = np.log(0.5 / np.sqrt(2.0 * np.pi * 0.01))

        assert report.test_ll == pytest.approx(expected, abs=1e-12)
        assert report.test_ll == pytest.approx(0.6905, abs=1e-4)
        assert report.train_ll == pytest.approx(expected, abs=1e-12)
        assert report.test_rmse == pytest.approx(1.0)
        assert np.allclose(table["log_density"], expected)
        assert np.allclose(table["var"], 1.01)

    def test_written_table_recomputes_mixture_ll(self, tmp_path):
        """evaluate_predictions reads the per-point mixture log densities back."""
        path = tmp_path / "predictions.csv"
        pd.DataFrame({"y": [1.0, 1.0], "mean": [0.0, 0.0], "var": [1.01, 1.01], "log_density": [0.5, 0.7]}).to_csv(
            path, index=False
        )

        assert evaluate_predictions(path)["ll"] == pytest.approx(0.6)


@pytest.mark.unit
class TestEvaluatePredictions:
    """Metrics recomputed from prediction tables."""

    def test_unknown_layout(self, tmp_path):
        """Tables with neither layout raise DatasetError."""
        path = tmp_path / "predictions.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(DatasetError):
            evaluate_predictions(path)
        with pytest.raises(DatasetError):
            evaluate_predictions(tmp_path / "missing.csv")


@pytest.mark.unit
class TestDiagnoseCorrelation:
    """SE versus deep-kernel correlation comparison."""

    def test_writes_both_fits_and_summary(self, tmp_path):
        """Both fits and the summary land under the output directory."""
        diagnosis = diagnose_correlation(_toy_config("exact-dkl", steps=10), tmp_path)
        summary = json.loads((tmp_path / "correlation_summary.json").read_text())

        assert (tmp_path / "se" / "correlation.csv").exists()
        assert (tmp_path / "dkl" / "correlation.csv").exists()
        assert summary["over_correlated"] == (diagnosis.dkl_mean_abs_corr > diagnosis.se_mean_abs_corr)
        assert 0.0 <= diagnosis.se_mean_abs_corr <= 1.0


SEEDS = [0, 1, 2, 3, 4]
MIN_AGREEING = 4

DKL_SCHEDULE = OptSchedule(steps=10000, lr=1e-3)


def _paper_toy_config(kind: str, seed: int, **kwargs) -> ExperimentConfig:
    return ExperimentConfig(
        model_kind=kind,
        seed=seed,
        net=NetSpec(hidden_widths=[100, 50], feature_dim=2, seed=seed),
        schedule=DKL_SCHEDULE,
        **kwargs,
    )


def _outer_and_inner_variance(path) -> tuple:
    """Mean predictive variance outside and inside the training range of a padded grid."""
    curve = pd.read_csv(path)
    var = ((curve["hi"] - curve["lo"]) / 4.0) ** 2
    x = curve["x"]
    span = x.max() - x.min()
    # the data range is the middle half of a grid padded by half the range on each side
    inside = (x >= x.min() + span / 4.0) & (x <= x.max() - span / 4.0)
    return float(var[~inside].mean()), float(var[inside].mean())


@pytest.fixture(scope="class")
def correlation_runs(tmp_path_factory):
    """SE and deep-kernel fits on 200 toy points, every point used for training, one per seed."""
    dataset = DatasetConfig(source="toy", size=200, test_fraction=None)
    runs = {}
    for seed in SEEDS:
        out = tmp_path_factory.mktemp(f"corr_seed_{seed}")
        diagnosis = diagnose_correlation(_paper_toy_config("exact-dkl", seed, dataset=dataset), out)
        runs[seed] = (diagnosis, json.loads((out / "dkl" / "metrics.json").read_text()))
    return runs


@pytest.mark.slow
@pytest.mark.integration
class TestOverfittingDiagnostics:
    """Long full-batch runs that reproduce the overfitting signature across seeds."""

    def test_deep_kernel_data_fit_near_half_n(self, correlation_runs):
        """At the optimal signal variance the deep kernel's data fit term sits near -N/2 = -100."""
        data_fits = [metrics["final_data_fit"] for _, metrics in correlation_runs.values()]

        assert sum(-105.0 <= fit <= -95.0 for fit in data_fits) >= MIN_AGREEING, data_fits

    def test_deep_kernel_over_correlates(self, correlation_runs):
        """The trained deep kernel correlates the training inputs more strongly than SE."""
        diagnoses = [diagnosis for diagnosis, _ in correlation_runs.values()]

        assert sum(d.over_correlated is True for d in diagnoses) >= MIN_AGREEING
        assert sum(d.dkl_mean_abs_corr > d.se_mean_abs_corr for d in diagnoses) >= MIN_AGREEING

    def test_deep_kernel_reaches_higher_objective(self, correlation_runs):
        """The deep kernel's marginal likelihood per point exceeds the SE kernel's."""
        diagnoses = [diagnosis for diagnosis, _ in correlation_runs.values()]

        assert (
            sum(d.dkl_objective_per_point > d.se_objective_per_point for d in diagnoses) >= MIN_AGREEING
        ), [(d.se_objective_per_point, d.dkl_objective_per_point) for d in diagnoses]

    def test_hmc_widens_uncertainty_and_generalizes(self, tmp_path):
        """
        On 20 training points HMC over the deep kernel is more uncertain away from the data
        than inside it, and scores at least the point-estimate deep kernel's test LL.
        """
        dataset = DatasetConfig(source="toy", size=200, subsample=25, test_fraction=0.2)
        hmc = HmcConfig(step_size=0.005, leapfrog_steps=10, burn_in=2000, samples=200, thin=10)
        widens, generalizes = 0, 0
        for seed in SEEDS:
            hmc_run = run_experiment(
                _paper_toy_config("hmc-dkl", seed, dataset=dataset, hmc=hmc), tmp_path / f"hmc_{seed}"
            )
            dkl_run = run_experiment(_paper_toy_config("exact-dkl", seed, dataset=dataset), tmp_path / f"dkl_{seed}")
            assert hmc_run.report.num_train == 20

            outer, inner = _outer_and_inner_variance(tmp_path / f"hmc_{seed}" / "predictive.csv")
            widens += outer > inner
            generalizes += hmc_run.report.test_ll >= dkl_run.report.test_ll

        assert widens >= MIN_AGREEING
        assert generalizes >= MIN_AGREEING

    def test_minibatch_training_regularizes(self, tmp_path):
        """Full-batch training overfits relative to minibatch training on most seeds."""
        config = ExperimentConfig(
            model_kind="exact-dkl",
            dataset=DatasetConfig(source="friedman", size=300),
            net=NetSpec(hidden_widths=[50, 50], feature_dim=2),
            schedule=OptSchedule(steps=3000, lr=1e-3),
            num_inducing=32,
        )
        outcome = asyncio.run(
            compare_minibatch_regularization(config, seeds=SEEDS, out_dir=tmp_path, batch_size=32)
        )

        assert len(outcome.rows) == len(SEEDS)
        assert outcome.required == MIN_AGREEING
        assert outcome.holds, [row.model_dump() for row in outcome.rows]

    @pytest.mark.skipif("DKLDIAG_SNELSON_PATH" not in os.environ, reason="DKLDIAG_SNELSON_PATH is not set")
    def test_snelson_se_marginal_likelihood(self, tmp_path):
        """The SE kernel's optimized log marginal likelihood on Snelson lands near -89.3."""
        config = ExperimentConfig(
            model_kind="exact-se",
            dataset=DatasetConfig(source="snelson", path=os.environ["DKLDIAG_SNELSON_PATH"], test_fraction=None),
            schedule=OptSchedule(steps=5000, lr=1e-2),
        )
        result = run_experiment(config, tmp_path)
        lml = result.report.objective_per_point * result.report.num_train

        assert -94.3 <= lml <= -84.3

    @pytest.mark.skipif("DKLDIAG_SNELSON_PATH" not in os.environ, reason="DKLDIAG_SNELSON_PATH is not set")
    def test_snelson_exact_dkl(self, tmp_path):
        """The Snelson data trains end to end with the exact deep kernel."""
        config = ExperimentConfig(
            model_kind="exact-dkl",
            dataset=DatasetConfig(source="snelson", path=os.environ["DKLDIAG_SNELSON_PATH"], test_fraction=None),
            net=NetSpec(hidden_widths=[50, 50], feature_dim=2),
            schedule=OptSchedule(steps=2000, lr=0.01),
        )
        result = run_experiment(config, tmp_path)

        assert (tmp_path / "predictive.csv").exists()
        assert result.report.final_sigma_n2 > 0
