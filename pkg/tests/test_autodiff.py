"""
Unit tests for dkldiag.autodiff: parameter vectors, the tape, gradients and Adam.
"""

import numpy as np
import pytest

from dkldiag.autodiff import (
    AdamState,
    NonScalarOutputError,
    OptimizerError,
    OptSchedule,
    ParamVector,
    UnregisteredPrimitiveError,
    adam_step,
    check_gradient,
    evaluate,
    gradient,
    gradient_with_aux,
    ops,
    run_adam,
)


@pytest.mark.unit
class TestParamVector:
    """Flat vectors with named blocks."""

    def test_blocks_round_trip(self):
        """Blocks keep their order, shapes and values."""
        theta = ParamVector.from_blocks({"kernel.a": np.array(1.5), "net.layer0.W": np.arange(6.0).reshape(2, 3)})

        assert theta.names == ["kernel.a", "net.layer0.W"]
        assert len(theta) == 7
        assert theta.block("kernel.a").shape == ()
        assert np.array_equal(theta.block("net.layer0.W"), np.arange(6.0).reshape(2, 3))

    def test_values_are_read_only(self):
        """The flat array cannot be mutated in place."""
        theta = ParamVector.from_blocks({"a": np.zeros(3)})
        with pytest.raises(ValueError):
            theta.values[0] = 1.0

    def test_masks_and_selection(self):
        """Prefix masks cover exactly the matching blocks."""
        theta = ParamVector.from_blocks({"kernel.a": np.zeros(2), "net.W": np.zeros(3), "net.b": np.zeros(1)})

        assert theta.mask(["net."]).tolist() == [False, False, True, True, True, True]
        assert not theta.mask([]).any()
        assert theta.select(["net."]) == ["net.W", "net.b"]

    def test_update_and_with_values(self):
        """Copies keep the layout and leave the original untouched."""
        theta = ParamVector.from_blocks({"a": np.zeros(2), "b": np.ones(1)})
        updated = theta.update({"b": np.array([5.0])})

        assert updated.same_layout(theta)
        assert updated.values.tolist() == [0.0, 0.0, 5.0]
        assert theta.values.tolist() == [0.0, 0.0, 1.0]
        with pytest.raises(ValueError):
            theta.with_values(np.zeros(4))

    def test_duplicate_names_rejected(self):
        """Block names must be unique."""
        from dkldiag.autodiff import ParamBlock

        with pytest.raises(ValueError, match="Duplicate"):
            ParamVector(np.zeros(2), [ParamBlock("a", 0, (1,)), ParamBlock("a", 1, (1,))])


@pytest.mark.unit
class TestGradients:
    """Reverse-mode gradients against closed forms and central differences."""

    def test_quadratic_gradient(self):
        """The gradient of sum((x - c)^2) is 2 (x - c)."""
        c = np.array([1.0, -2.0, 0.5])
        theta = ParamVector.from_blocks({"x": np.array([0.3, 0.1, -0.7])})
        value, grad = gradient(lambda v: ops.sum(ops.square(ops.subtract(v["x"], c))), theta)

        assert value == pytest.approx(float(np.sum((theta.values - c) ** 2)))
        assert np.allclose(grad.values, 2.0 * (theta.values - c))

    def test_operator_overloads_and_numpy_routing(self):
        """Python operators and registered numpy calls record on the tape."""
        A = np.array([[1.0, 2.0], [0.5, -1.0]])
        theta = ParamVector.from_blocks({"x": np.array([0.2, -0.4])})

        def f(v):
            x = v["x"]
            return np.sum(np.exp(A @ x) * 2.0 - x / 3.0)

        assert check_gradient(f, theta) < 1e-7

    def test_cholesky_solve_and_logdet_adjoints(self):
        """Gradients through the Cholesky primitives agree with finite differences."""
        rng = np.random.default_rng(0)
        theta = ParamVector.from_blocks({"M": 0.5 * rng.standard_normal((4, 4))})
        b = rng.standard_normal(4)

        def f(v):
            M = v["M"]
            S = ops.add(ops.matmul(M, ops.transpose(M)), np.eye(4))
            L = ops.cholesky(S)
            alpha = ops.solve_triangular(L, b)
            beta = ops.solve_posdef(L, b)
            return ops.add(
                ops.add(ops.sum(ops.square(alpha)), ops.logdet_from_cholesky(L)), ops.sum(ops.multiply(beta, b))
            )

        assert check_gradient(f, theta) < 1e-6

    def test_softmax_and_structural_ops(self):
        """log_softmax, logsumexp, stacking and triangular masks have correct adjoints."""
        rng = np.random.default_rng(1)
        theta = ParamVector.from_blocks({"a": rng.standard_normal((3, 3)), "d": rng.standard_normal(3)})

        def f(v):
            T = ops.add(ops.tril(v["a"], -1), ops.diag_embed(ops.exp(v["d"])))
            stacked = ops.stack([ops.diag_part(T), ops.sum(T, axis=0)], axis=0)
            joined = ops.concatenate([stacked, ops.reshape(v["d"], (1, 3))], axis=0)
            return ops.add(ops.sum(ops.log_softmax(joined, axis=1)[:, 0]), ops.logsumexp(joined))

        assert check_gradient(f, theta) < 1e-6

    def test_unregistered_primitive_raises(self):
        """numpy functions without an adjoint refuse tape nodes."""
        theta = ParamVector.from_blocks({"x": np.array([0.1, 0.2])})
        with pytest.raises(UnregisteredPrimitiveError):
            gradient(lambda v: np.sum(np.sin(v["x"])), theta)
        with pytest.raises(UnregisteredPrimitiveError):
            gradient(lambda v: np.sum(np.cumsum(v["x"])), theta)

    def test_non_scalar_output_raises(self):
        """Only scalar objectives can be differentiated."""
        theta = ParamVector.from_blocks({"x": np.zeros(2)})
        with pytest.raises(NonScalarOutputError):
            gradient(lambda v: ops.exp(v["x"]), theta)

    def test_constant_objective_has_zero_gradient(self):
        """Objectives that ignore the parameters give a zero gradient."""
        theta = ParamVector.from_blocks({"x": np.ones(3)})
        value, grad = gradient(lambda v: 4.0, theta)

        assert value == 4.0
        assert np.array_equal(grad.values, np.zeros(3))

    def test_plain_evaluation_and_aux(self):
        """evaluate runs without a tape; aux values come back as floats."""
        theta = ParamVector.from_blocks({"x": np.array([2.0])})

        def f(v):
            sq = ops.sum(ops.square(v["x"]))
            return sq, {"half": ops.multiply(0.5, sq)}

        assert evaluate(lambda v: f(v)[0], theta) == pytest.approx(4.0)
        value, grad, aux = gradient_with_aux(f, theta)
        assert value == pytest.approx(4.0)
        assert grad.values[0] == pytest.approx(4.0)
        assert aux == {"half": pytest.approx(2.0)}

    def test_ops_return_plain_arrays_without_nodes(self):
        """No tape is involved when no input is a node."""
        out = ops.matmul(np.eye(2), np.ones(2))

        assert isinstance(out, np.ndarray)
        assert not ops.is_node(out)


@pytest.mark.unit
class TestOptSchedule:
    """Step-decay learning rates."""

    def test_default_decays(self):
        """The rate drops tenfold at half and three quarters of training."""
        schedule = OptSchedule(steps=100, lr=1e-2)

        assert schedule.lr_at(0) == pytest.approx(1e-2)
        assert schedule.lr_at(49) == pytest.approx(1e-2)
        assert schedule.lr_at(50) == pytest.approx(1e-3)
        assert schedule.lr_at(74) == pytest.approx(1e-3)
        assert schedule.lr_at(75) == pytest.approx(1e-4)

    def test_invalid_decay_points(self):
        """Decay points must be fractions strictly inside (0, 1)."""
        with pytest.raises(ValueError):
            OptSchedule(decay_points=[1.0])


@pytest.mark.unit
class TestAdam:
    """Adam updates, freezing and weight decay."""

    def test_first_step_moves_by_learning_rate(self):
        """With bias correction the first update has magnitude lr in every coordinate."""
        theta = ParamVector.from_blocks({"x": np.array([1.0, -1.0])})
        grad = theta.with_values(np.array([3.0, -0.2]))
        state, new = adam_step(AdamState.for_params(theta, lr=0.1), theta, grad)

        assert state.t == 1
        assert np.allclose(new.values, [0.9, -0.9], atol=1e-6)

    def test_frozen_blocks_do_not_move(self):
        """Frozen prefixes keep their values and moments."""
        theta = ParamVector.from_blocks({"net.W": np.ones(2), "kernel.a": np.ones(1)})
        grad = theta.with_values(np.ones(3))
        state, new = adam_step(AdamState.for_params(theta, lr=0.1, frozen=("net.",)), theta, grad)

        assert np.array_equal(new.block("net.W"), np.ones(2))
        assert np.array_equal(state.m[:2], np.zeros(2))
        assert new.block("kernel.a")[0] < 1.0

    def test_weight_decay_only_on_named_blocks(self):
        """Weight decay pulls the designated block towards zero even with a zero gradient."""
        theta = ParamVector.from_blocks({"net.W": np.array([2.0]), "kernel.a": np.array([2.0])})
        grad = theta.with_values(np.zeros(2))
        _, new = adam_step(AdamState.for_params(theta, lr=0.1, weight_decay={"net.": 0.5}), theta, grad)

        assert new.block("net.W")[0] < 2.0
        assert new.block("kernel.a")[0] == 2.0

    def test_dimension_mismatch(self):
        """Gradients of the wrong size raise OptimizerError."""
        theta = ParamVector.from_blocks({"x": np.zeros(2)})
        grad = ParamVector.from_blocks({"x": np.zeros(3)})
        with pytest.raises(OptimizerError):
            adam_step(AdamState.for_params(theta), theta, grad)

    def test_run_adam_minimizes_quadratic(self):
        """A convex quadratic is driven to its minimizer."""
        theta = ParamVector.from_blocks({"x": np.array([0.0, 10.0])})
        target = np.array([3.0, -1.0])
        seen = []

        def loss(v):
            return ops.sum(ops.square(ops.subtract(v["x"], target))), {}

        def callback(step, theta, value, aux):
            seen.append(value)

        fitted, state = run_adam(loss, theta, OptSchedule(steps=2000, lr=0.1), callback=callback)

        assert state.t == 2000
        assert len(seen) == 2000
        assert np.allclose(fitted.values, target, atol=1e-2)
        assert seen[-1] < seen[0]

    def test_run_adam_non_finite_raises(self):
        """A non-finite objective stops the run and reports the step."""
        theta = ParamVector.from_blocks({"x": np.array([-1.0])})

        def loss(v):
            return ops.sum(ops.log(v["x"])), {}

        with pytest.raises(OptimizerError) as excinfo:
            run_adam(loss, theta, OptSchedule(steps=5, lr=0.1))
        assert excinfo.value.step == 0

    def test_batch_loss_factory_is_used_per_step(self):
        """batch_loss receives every step index in order."""
        theta = ParamVector.from_blocks({"x": np.zeros(1)})
        steps = []

        def batch_loss(step):
            steps.append(step)
            return lambda v: (ops.sum(ops.square(v["x"])), {})

        run_adam(None, theta, OptSchedule(steps=4), batch_loss=batch_loss)
        assert steps == [0, 1, 2, 3]
