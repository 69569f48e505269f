"""Unit tests for differentiable primitives."""

import numpy as np
import pytest

from dks_lab.core import ops
from dks_lab.core.ops import BatchNormState, Mode
from dks_lab.core.tensor import Tensor, backward
from dks_lab.core.verifier import check_primitive
from dks_lab.exceptions import ConfigurationException


class TestForward:
    """Test suite for forward values."""

    def test_softmax_rows_sum_to_one(self, float64: None) -> None:
        """Test softmax is stable for large logits."""
        out = ops.softmax(Tensor([[1000.0, 1000.0], [0.0, np.log(3.0)]]))
        np.testing.assert_allclose(out.data, [[0.5, 0.5], [0.25, 0.75]])

    def test_log_softmax_matches_log_of_softmax(self, float64: None, rng) -> None:
        """Test log_softmax agrees with log(softmax) away from underflow."""
        x = Tensor(rng.normal(size=(3, 5)))
        np.testing.assert_allclose(
            ops.log_softmax(x).data, np.log(ops.softmax(x).data), rtol=1e-12
        )

    def test_log_floor_clamps_and_zeroes_gradient(self, float64: None) -> None:
        """Test inputs below the floor are clamped and get no gradient."""
        x = Tensor([1e-20, 2.0], requires_grad=True)
        out = ops.log(x, floor=1e-12)
        np.testing.assert_allclose(out.data, [np.log(1e-12), np.log(2.0)])
        backward(ops.sum(out))
        np.testing.assert_allclose(x.grad, [0.0, 0.5])

    def test_relu_gradient_at_zero(self) -> None:
        """Test the ReLU subgradient at exactly zero is zero."""
        x = Tensor([-1.0, 0.0, 2.0], requires_grad=True)
        backward(ops.sum(ops.relu(x)))
        np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])

    def test_activation_patterns_recorded(self) -> None:
        """Test ReLU masks are collected only inside the block."""
        with ops.record_activation_patterns() as patterns:
            ops.relu(Tensor([-1.0, 1.0]))
        ops.relu(Tensor([1.0]))
        assert len(patterns) == 1
        np.testing.assert_array_equal(patterns[0], [False, True])

    def test_conv2d_output_shape(self, rng) -> None:
        """Test the output size formula with stride and padding."""
        x = Tensor(rng.normal(size=(2, 3, 7, 7)))
        w = Tensor(rng.normal(size=(4, 3, 3, 3)))
        assert ops.conv2d(x, w, stride=2, padding=1).shape == (2, 4, 4, 4)

    def test_conv2d_matches_direct_sum(self, float64: None, rng) -> None:
        """Test one output element against an explicit cross-correlation."""
        x = rng.normal(size=(1, 2, 4, 4))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), padding=0).data
        expected = np.sum(x[0, :, 1:4, 0:3] * w[2]) + b[2]
        assert out[0, 2, 1, 0] == pytest.approx(expected, rel=1e-12)

    def test_conv2d_channel_mismatch(self, rng) -> None:
        """Test mismatched channels are configuration errors."""
        with pytest.raises(ConfigurationException):
            ops.conv2d(Tensor(rng.normal(size=(1, 3, 4, 4))), Tensor(rng.normal(size=(2, 2, 3, 3))))

    def test_max_pool_tie_routes_to_first(self) -> None:
        """Test gradient goes to the first maximum in a window."""
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        backward(ops.sum(ops.max_pool(x)))
        np.testing.assert_array_equal(x.grad.reshape(-1), [1.0, 0.0, 0.0, 0.0])

    def test_max_pool_winners_recorded(self) -> None:
        """Test the winning position of each pooling window is collected."""
        x = Tensor(np.array([[[[0.0, 3.0, 1.0, 1.0], [2.0, 1.0, 0.0, 5.0]]]]))
        with ops.record_activation_patterns() as patterns:
            ops.max_pool(x)
        assert len(patterns) == 1
        np.testing.assert_array_equal(patterns[0], [[[[1, 3]]]])

    def test_global_avg_pool(self) -> None:
        """Test channel means."""
        x = Tensor(np.arange(8.0).reshape(1, 2, 2, 2))
        np.testing.assert_allclose(ops.global_avg_pool(x).data, [[1.5, 5.5]])

    def test_add_shape_mismatch(self) -> None:
        """Test elementwise ops need equal shapes."""
        with pytest.raises(ConfigurationException):
            ops.add(Tensor([1.0]), Tensor([1.0, 2.0]))

    def test_matmul_inner_mismatch(self) -> None:
        """Test matmul checks inner dimensions."""
        with pytest.raises(ConfigurationException):
            ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_one_hot(self) -> None:
        """Test one-hot rows."""
        np.testing.assert_array_equal(
            ops.one_hot(np.array([2, 0]), 3).data, [[0, 0, 1], [1, 0, 0]]
        )


class TestBatchNorm:
    """Test suite for batch normalization."""

    def test_train_mode_updates_running_stats(self, float64: None, rng) -> None:
        """Test the moving average update with momentum 0.1."""
        x = Tensor(rng.normal(loc=2.0, size=(4, 2, 3, 3)))
        state = BatchNormState.initial(2)
        ops.batchnorm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), state, Mode.TRAIN)
        np.testing.assert_allclose(state.running_mean, 0.1 * x.data.mean(axis=(0, 2, 3)))
        np.testing.assert_allclose(state.running_var, 0.9 + 0.1 * x.data.var(axis=(0, 2, 3)))

    def test_train_mode_normalizes(self, float64: None, rng) -> None:
        """Test per-channel outputs have zero mean and unit variance."""
        x = Tensor(rng.normal(loc=5.0, scale=3.0, size=(8, 2, 4, 4)))
        out = ops.batchnorm(
            x, Tensor(np.ones(2)), Tensor(np.zeros(2)), BatchNormState.initial(2), Mode.TRAIN
        )
        np.testing.assert_allclose(out.data.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.data.var(axis=(0, 2, 3)), 1.0, rtol=1e-4)

    def test_eval_mode_leaves_stats(self, float64: None, rng) -> None:
        """Test eval mode uses and keeps the running statistics."""
        state = BatchNormState.initial(2)
        x = Tensor(rng.normal(size=(2, 2, 2, 2)))
        out = ops.batchnorm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), state, Mode.EVAL)
        np.testing.assert_array_equal(state.running_mean, [0.0, 0.0])
        np.testing.assert_allclose(out.data, x.data / np.sqrt(1.0 + state.eps))


class TestDropout:
    """Test suite for inverted dropout."""

    def test_eval_is_identity(self, rng) -> None:
        """Test eval mode returns the input unchanged."""
        x = Tensor(np.ones(10))
        assert ops.dropout(x, 0.5, Mode.EVAL, rng) is x

    def test_train_scales_survivors(self, rng) -> None:
        """Test survivors are scaled by 1 / (1 - p)."""
        out = ops.dropout(Tensor(np.ones(1000)), 0.5, Mode.TRAIN, rng)
        assert set(np.unique(out.data)) <= {0.0, 2.0}
        assert 0 < np.count_nonzero(out.data) < 1000

    def test_invalid_ratio(self, rng) -> None:
        """Test p must lie in [0, 1)."""
        with pytest.raises(ConfigurationException):
            ops.dropout(Tensor(np.ones(2)), 1.0, Mode.TRAIN, rng)


class TestGradients:
    """Finite-difference checks of every primitive in 64-bit precision."""

    @pytest.mark.parametrize(
        ("name", "op", "shapes"),
        [
            ("add", ops.add, [(2, 3), (2, 3)]),
            ("sub", ops.sub, [(2, 3), (2, 3)]),
            ("mul", ops.mul, [(2, 3), (2, 3)]),
            ("tanh", ops.tanh, [(4,)]),
            ("exp", ops.exp, [(4,)]),
            ("softmax", ops.softmax, [(3, 4)]),
            ("log_softmax", ops.log_softmax, [(3, 4)]),
            ("matmul", ops.matmul, [(2, 3), (3, 4)]),
            ("linear", ops.linear, [(2, 3), (4, 3), (4,)]),
            ("mean", lambda x: ops.mean(x, axis=1), [(2, 5)]),
            ("global_avg_pool", ops.global_avg_pool, [(2, 3, 2, 2)]),
            ("conv2d", lambda x, w, b: ops.conv2d(x, w, b, stride=2, padding=1),
             [(2, 2, 5, 5), (3, 2, 3, 3), (3,)]),
        ],
    )
    def test_smooth_primitives(self, float64: None, name, op, shapes) -> None:
        """Test analytic gradients agree with central differences."""
        rng = np.random.default_rng(7)
        report = check_primitive(name, op, [rng.normal(size=shape) for shape in shapes], seed=3)
        assert report.passed, report.failures()

    def test_power_on_positive_inputs(self, float64: None) -> None:
        """Test power away from zero."""
        inputs = [np.random.default_rng(1).uniform(0.5, 2.0, size=5)]
        report = check_primitive("power", lambda x: ops.power(x, 3.0), inputs)
        assert report.passed

    def test_batchnorm_train(self, float64: None) -> None:
        """Test batch-statistics normalization including the input gradient."""
        rng = np.random.default_rng(2)
        inputs = [rng.normal(size=(3, 2, 2, 2)), rng.uniform(0.5, 1.5, 2), rng.normal(size=2)]
        report = check_primitive(
            "batchnorm",
            lambda x, g, b: ops.batchnorm(x, g, b, BatchNormState.initial(2), Mode.TRAIN),
            inputs,
        )
        assert report.passed
