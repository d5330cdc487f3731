"""
Unit tests for exact GP regression: the decomposed marginal likelihood, the optimal
signal variance, closed-form prediction and full-batch training.
"""

from unittest.mock import patch

import numpy as np
import pytest
import scipy.stats

from dkldiag.autodiff import OptimizerError, OptSchedule, check_gradient, ops
from dkldiag.core import RandomStream
from dkldiag.models import (
    ArdSeParams,
    ExactGpError,
    GpModel,
    KernelError,
    NetSpec,
    TrainingDivergedError,
    complexity_expansion,
    fit_full_batch,
    log_marginal_decomposed,
    optimal_signal_variance,
    predict,
    with_signal_variance,
)
from dkldiag.models.exact_gp import lml_terms


def _random_se_problem(seed: int, n: int = 15, dim: int = 2):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2.0, 2.0, (n, dim))
    y = rng.standard_normal(n)
    kernel = ArdSeParams(
        log_sigma_f2=np.asarray(rng.uniform(-1.0, 1.0)), log_lengthscales=rng.uniform(-1.0, 1.0, dim)
    )
    model = GpModel(kernel=kernel, log_sigma_n2=np.asarray(rng.uniform(-1.0, 0.0)))
    return model, X, y


@pytest.mark.unit
class TestLogMarginalLikelihood:
    """The LML and its three terms."""

    def test_total_matches_multivariate_normal(self):
        """The total equals log N(y | 0, K + sigma_n^2 I)."""
        model, X, y = _random_se_problem(0)
        K = ops.value_of(model.kernel.matrix(X)) + model.sigma_n2 * np.eye(len(y))
        expected = scipy.stats.multivariate_normal.logpdf(y, mean=np.zeros(len(y)), cov=K)

        terms = log_marginal_decomposed(model, X, y)
        assert terms.total == pytest.approx(expected, abs=1e-9)
        assert terms.total == pytest.approx(terms.data_fit + terms.complexity + terms.constant, abs=1e-12)
        assert terms.constant == pytest.approx(-0.5 * len(y) * np.log(2.0 * np.pi))
        assert terms.data_fit < 0

    def test_optimal_signal_variance_sets_data_fit(self):
        """At the optimal sigma_f^2 (noise ratio held fixed) the data fit is exactly -N/2."""
        for seed in range(20):
            model, X, y = _random_se_problem(seed)
            sigma_f2 = optimal_signal_variance(model, X, y)
            rescaled = with_signal_variance(model, sigma_f2)

            assert rescaled.sigma_n2 / rescaled.sigma_f2 == pytest.approx(model.sigma_n2 / model.sigma_f2)
            assert log_marginal_decomposed(rescaled, X, y).data_fit == pytest.approx(-0.5 * len(y), abs=1e-8)

    def test_optimal_signal_variance_maximizes_lml(self):
        """Moving sigma_f^2 away from the optimum lowers the LML."""
        model, X, y = _random_se_problem(3)
        best = with_signal_variance(model, optimal_signal_variance(model, X, y))
        best_total = log_marginal_decomposed(best, X, y).total

        for factor in (0.5, 2.0):
            other = with_signal_variance(model, best.sigma_f2 * factor)
            assert log_marginal_decomposed(other, X, y).total < best_total

    def test_all_zero_targets(self):
        """Zero targets give zero optimal signal variance, clamped by with_signal_variance."""
        model, X, _ = _random_se_problem(1)
        y = np.zeros(X.shape[0])

        assert optimal_signal_variance(model, X, y) == 0.0
        assert with_signal_variance(model, 0.0).sigma_f2 == pytest.approx(1e-10)

    def test_complexity_expansion_sums_to_complexity(self):
        """The scale and shape parts add up to the complexity term."""
        model, X, y = _random_se_problem(2)
        scale_term, shape_term = complexity_expansion(model, X)

        assert scale_term == pytest.approx(-0.5 * len(y) * np.log(model.sigma_f2))
        assert scale_term + shape_term == pytest.approx(log_marginal_decomposed(model, X, y).complexity, abs=1e-9)

    def test_gradient_matches_finite_differences_se(self):
        """Reverse-mode LML gradients agree with central differences (SE kernel)."""
        for seed in range(10):
            model, X, y = _random_se_problem(100 + seed, n=8)
            theta = model.to_params()

            def f(view):
                return lml_terms(model.bind(view), X, y)[0]

            assert check_gradient(f, theta) < 1e-4

    def test_gradient_matches_finite_differences_deep(self):
        """Reverse-mode LML gradients agree with central differences (deep kernel)."""
        spec = NetSpec(input_dim=2, hidden_widths=[6], feature_dim=2)
        rng = np.random.default_rng(7)
        X = rng.uniform(-1.0, 1.0, (10, 2))
        y = rng.standard_normal(10)
        for seed in range(3):
            model = GpModel.deep(spec, RandomStream(seed), log_sigma_n2=-1.0)
            theta = model.to_params()

            def f(view):
                return lml_terms(model.bind(view), X, y)[0]

            assert check_gradient(f, theta) < 1e-4

    def test_invalid_data(self):
        """Row mismatches, empty data and non-finite targets raise ExactGpError."""
        model = GpModel.se(1)
        with pytest.raises(ExactGpError):
            log_marginal_decomposed(model, np.zeros((3, 1)), np.zeros(2))
        with pytest.raises(ExactGpError):
            log_marginal_decomposed(model, np.zeros((0, 1)), np.zeros(0))
        with pytest.raises(ExactGpError):
            log_marginal_decomposed(model, np.zeros((1, 1)), np.array([np.inf]))


@pytest.mark.unit
class TestPredict:
    """Closed-form GP posterior."""

    def test_no_data_returns_prior(self):
        """With N = 0 the predictive is the prior."""
        model = GpModel.se(1)
        X_star = np.linspace(-1.0, 1.0, 4)[:, None]
        pred = predict(model, np.zeros((0, 1)), np.zeros(0), X_star, full_cov=True)

        assert np.array_equal(pred.mean, np.zeros(4))
        assert np.allclose(pred.var, model.sigma_f2)
        assert np.allclose(pred.cov, ops.value_of(model.kernel.matrix(X_star)))

    def test_low_noise_interpolates(self):
        """With tiny noise the posterior mean passes through the data."""
        model = GpModel.se(1, log_sigma_n2=float(np.log(1e-6)))
        X = np.linspace(0.0, 3.0, 4)[:, None]
        y = np.sin(X[:, 0])
        pred = predict(model, X, y, X)

        assert np.allclose(pred.mean, y, atol=1e-3)
        assert np.all(pred.var < 1e-3)
        assert not pred.includes_noise

    def test_noise_adds_to_variance(self):
        """with_noise adds sigma_n^2 to every marginal variance."""
        model, X, y = _random_se_problem(4)
        X_star = np.zeros((3, 2))
        latent = predict(model, X, y, X_star)
        noisy = predict(model, X, y, X_star, with_noise=True)

        assert np.allclose(noisy.var - latent.var, model.sigma_n2)
        assert np.allclose(noisy.mean, latent.mean)
        assert noisy.includes_noise

    def test_far_inputs_revert_to_prior(self):
        """Far from the data the mean returns to zero and the variance to sigma_f^2."""
        model, X, y = _random_se_problem(5)
        pred = predict(model, X, y, np.full((1, 2), 1e3))

        assert pred.mean[0] == pytest.approx(0.0, abs=1e-12)
        assert pred.var[0] == pytest.approx(model.sigma_f2)


@pytest.mark.unit
class TestGpModel:
    """Parameter layout of the exact GP."""

    def test_block_names_and_round_trip(self):
        """to_params and from_params preserve every value."""
        model, _, _ = _random_se_problem(6)
        theta = model.to_params()

        assert theta.names == ["kernel.log_sigma_f2", "kernel.log_lengthscales", "likelihood.log_sigma_n2"]
        restored = model.from_params(theta)
        assert restored.sigma_n2 == model.sigma_n2
        assert np.array_equal(restored.kernel.log_lengthscales, model.kernel.log_lengthscales)

    def test_deep_model_includes_network_blocks(self):
        """Deep models expose net.layer blocks between kernel and noise."""
        model = GpModel.deep(NetSpec(input_dim=1, hidden_widths=[3], feature_dim=2), RandomStream(0))
        names = model.to_params().names

        assert names[:2] == ["kernel.log_sigma_f2", "kernel.log_lengthscales"]
        assert "net.layer1.W" in names
        assert names[-1] == "likelihood.log_sigma_n2"
        assert model.sigma_n2 == pytest.approx(np.exp(-4.0))


def _toy(n: int = 30, seed: int = 0):
    rng = np.random.default_rng(seed)
    X = np.sort(rng.uniform(-2.0, 2.0, n))[:, None]
    y = np.sin(2.0 * X[:, 0]) + 0.1 * rng.standard_normal(n)
    return X, y


@pytest.mark.unit
class TestFitFullBatch:
    """Adam training of the exact GP."""

    def test_training_increases_lml(self):
        """The final LML beats the initial one and the trace ends on the returned model."""
        X, y = _toy()
        model = GpModel.se(1)
        schedule = OptSchedule(steps=200, lr=0.05)
        fitted, trace = fit_full_batch(model, X, y, schedule)

        assert len(trace) == 201
        assert trace[0].step == 0 and trace[-1].step == 200
        assert trace[-1].total > trace[0].total
        final = log_marginal_decomposed(fitted, X, y)
        assert trace[-1].total == pytest.approx(final.total)
        assert trace[-1].sigma_n2 == pytest.approx(fitted.sigma_n2)
        assert 0.0 <= trace[-1].mean_abs_corr <= 1.0

    def test_trace_every(self):
        """trace_every thins the trace but keeps the final record."""
        X, y = _toy()
        _, trace = fit_full_batch(GpModel.se(1), X, y, OptSchedule(steps=20, lr=0.01, trace_every=5))

        assert [r.step for r in trace] == [0, 5, 10, 15, 20]

    def test_frozen_network_does_not_move(self):
        """Frozen net blocks keep their initial weights."""
        X, y = _toy()
        model = GpModel.deep(NetSpec(input_dim=1, hidden_widths=[8], feature_dim=2), RandomStream(0))
        fitted, _ = fit_full_batch(model, X, y, OptSchedule(steps=20, lr=0.01), frozen=("net.",))

        for before, after in zip(model.kernel.net.layers, fitted.kernel.net.layers):
            assert np.array_equal(before.weight, after.weight)
        assert fitted.sigma_n2 != model.sigma_n2

    def test_divergence_carries_trace(self):
        """Optimizer failures surface as TrainingDivergedError with the partial trace."""
        X, y = _toy()
        with patch("dkldiag.models.exact_gp.run_adam", side_effect=OptimizerError("boom", step=3)):
            with pytest.raises(TrainingDivergedError) as excinfo:
                fit_full_batch(GpModel.se(1), X, y, OptSchedule(steps=10))
        assert isinstance(excinfo.value.trace, list)
        assert "boom" in str(excinfo.value)

    def test_undefined_correlation_is_skipped(self):
        """A correlation the kernel cannot define leaves mean_abs_corr unset; training goes on."""
        X, y = _toy()
        with patch("dkldiag.models.exact_gp.mean_abs_correlation", side_effect=KernelError("zero variance")):
            _, trace = fit_full_batch(GpModel.se(1), X, y, OptSchedule(steps=5, lr=0.01))

        assert len(trace) == 6
        assert all(r.mean_abs_corr is None for r in trace)

    def test_unexpected_correlation_errors_propagate(self):
        """Only kernel errors are skipped; other failures while tracing surface to the caller."""
        X, y = _toy()
        with patch("dkldiag.models.exact_gp.mean_abs_correlation", side_effect=ValueError("bad shape")):
            with pytest.raises(ValueError, match="bad shape"):
                fit_full_batch(GpModel.se(1), X, y, OptSchedule(steps=5, lr=0.01))
