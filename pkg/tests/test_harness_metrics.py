"""
Unit tests for the regression and classification metrics against hand-computed values.
"""

import numpy as np
import pytest

from dkldiag.harness import MetricsError, accuracy, ece, incorrect_only_ll, mean_gaussian_ll, mean_log_prob, rmse


@pytest.mark.unit
class TestRegressionMetrics:
    """RMSE and Gaussian log likelihood."""

    def test_rmse(self):
        """Root of the mean squared error."""
        assert rmse(np.array([0.0, 0.0]), np.array([3.0, 4.0])) == pytest.approx(np.sqrt(12.5))

    def test_gaussian_ll_zero_at_unit_density(self):
        """With variance 1 / (2 pi) and exact means every log density is zero."""
        y = np.array([0.5, -1.0, 2.0])
        assert mean_gaussian_ll(y, np.full(3, 1.0 / (2.0 * np.pi)), y) == pytest.approx(0.0, abs=1e-12)

    def test_gaussian_ll_value(self):
        """The mean of log N(y | mu, v) over points."""
        value = mean_gaussian_ll(np.array([0.0, 1.0]), np.array([1.0, 4.0]), np.array([1.0, 1.0]))
        expected = 0.5 * ((-0.5 * np.log(2.0 * np.pi) - 0.5) + (-0.5 * np.log(8.0 * np.pi)))

        assert value == pytest.approx(expected)

    def test_invalid_inputs(self):
        """Empty, mismatched and non-positive variance inputs raise MetricsError."""
        with pytest.raises(MetricsError):
            rmse(np.zeros(0), np.zeros(0))
        with pytest.raises(MetricsError):
            rmse(np.zeros(2), np.zeros(3))
        with pytest.raises(MetricsError):
            mean_gaussian_ll(np.zeros(1), np.zeros(1), np.zeros(1))


@pytest.mark.unit
class TestClassificationMetrics:
    """Accuracy, calibration and log probabilities."""

    PROBS = np.array(
        [
            [0.4, 0.3, 0.3],
            [0.3, 0.4, 0.3],
            [0.9, 0.05, 0.05],
            [0.05, 0.9, 0.05],
        ]
    )
    LABELS = np.array([0, 0, 0, 0])

    def test_accuracy(self):
        """Fraction of rows whose argmax is the label."""
        assert accuracy(self.PROBS, self.LABELS) == pytest.approx(0.5)

    def test_ece_two_bins(self):
        """Bins (0, 0.5] and (0.5, 1] each hold one right and one wrong prediction."""
        assert ece(self.PROBS, self.LABELS, bins=2) == pytest.approx(0.25)

    def test_ece_extremes(self):
        """Confident correct predictions give 0; confident wrong ones give 1."""
        confident = np.array([[1.0, 0.0], [0.0, 1.0]])

        assert ece(confident, np.array([0, 1])) == pytest.approx(0.0)
        assert ece(confident, np.array([1, 0])) == pytest.approx(1.0)

    def test_ece_upper_bin_edge_is_inclusive(self):
        """A confidence of exactly 0.5 falls into the lower of two bins."""
        probs = np.array([[0.5, 0.5], [0.6, 0.4]])

        assert ece(probs, np.array([0, 0]), bins=2) == pytest.approx(0.5 * 0.5 + 0.5 * 0.4)

    def test_mean_log_prob(self):
        """Mean log probability of the true class."""
        assert mean_log_prob(self.PROBS, self.LABELS) == pytest.approx(
            np.mean(np.log([0.4, 0.3, 0.9, 0.05]))
        )

    def test_incorrect_only_ll(self):
        """Only misclassified rows contribute."""
        p = np.exp(-2.0)
        probs = np.array([[1.0 - p, p], [p, 1.0 - p], [0.2, 0.8]])
        value, empty = incorrect_only_ll(probs, np.array([1, 0, 1]))

        assert value == pytest.approx(-2.0)
        assert not empty

    def test_incorrect_only_ll_when_all_correct(self):
        """No misclassified rows gives (0.0, True)."""
        assert incorrect_only_ll(np.array([[0.9, 0.1]]), np.array([0])) == (0.0, True)

    def test_invalid_tables(self):
        """Rows must sum to one and labels must index a column."""
        with pytest.raises(MetricsError):
            accuracy(np.array([[0.5, 0.6]]), np.array([0]))
        with pytest.raises(MetricsError):
            accuracy(np.array([[0.5, 0.5]]), np.array([2]))
        with pytest.raises(MetricsError):
            ece(self.PROBS, self.LABELS, bins=0)
