"""Differentiable primitives.

Each function computes its forward value with numpy and, when any input requires
grad and recording is enabled, attaches a :class:`~dks_lab.core.tensor.Node` whose
closure computes the input gradients. Operands must have matching shapes; the only
implicit broadcasting is the per-channel bias/affine handling inside ``conv2d``,
``linear`` and ``batchnorm``.
"""

from __future__ import annotations

from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import dataclass
from enum import StrEnum
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from dks_lab.core.tensor import Array, BackwardFn, Node, Tensor, default_dtype, is_grad_enabled
from dks_lab.exceptions import ConfigurationException

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1

_activation_log: list[Array] | None = None


class Mode(StrEnum):
    """Forward-pass mode for batch normalization and dropout."""

    TRAIN = "train"
    EVAL = "eval"


def _record(op: str, data: Array, inputs: tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op=op, inputs=inputs, backward_fn=backward_fn)
    return out


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        msg = f"{op}: shape mismatch between {a.shape} and {b.shape}"
        raise ConfigurationException(msg)


def _require_ndim(op: str, x: Tensor, ndim: int, label: str = "input") -> None:
    if x.ndim != ndim:
        msg = f"{op}: expected a {ndim}-d {label}, got shape {x.shape}"
        raise ConfigurationException(msg)


# Elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise ``a + b``."""
    _require_same_shape("add", a, b)
    return _record("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise ``a - b``."""
    _require_same_shape("sub", a, b)
    return _record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise ``a * b``."""
    _require_same_shape("mul", a, b)
    a_data, b_data = a.data, b.data
    return _record("mul", a_data * b_data, (a, b), lambda g: (g * b_data, g * a_data))


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply every element by a Python scalar."""
    return _record("scale", x.data * x.dtype.type(factor), (x,), lambda g: (g * factor,))


def power(x: Tensor, exponent: float) -> Tensor:
    """Elementwise ``x ** exponent``."""
    x_data = x.data

    def backward_fn(g: Array) -> tuple[Array]:
        return (g * exponent * x_data ** (exponent - 1),)

    return _record("power", x_data**exponent, (x,), backward_fn)


def exp(x: Tensor) -> Tensor:
    """Elementwise exponential."""
    out = np.exp(x.data)
    return _record("exp", out, (x,), lambda g: (g * out,))


def tanh(x: Tensor) -> Tensor:
    """Elementwise hyperbolic tangent."""
    out = np.tanh(x.data)
    return _record("tanh", out, (x,), lambda g: (g * (1 - out * out),))


def log(x: Tensor, floor: float | None = None) -> Tensor:
    """Elementwise natural log.

    Args:
        x: Input tensor.
        floor: If given, inputs below ``floor`` are clamped to it and receive a zero
            gradient.
    """
    x_data = x.data
    if floor is None:
        return _record("log", np.log(x_data), (x,), lambda g: (g / x_data,))
    clamped = np.maximum(x_data, x.dtype.type(floor))
    active = x_data >= floor

    def backward_fn(g: Array) -> tuple[Array]:
        return (np.where(active, g / clamped, 0).astype(x_data.dtype),)

    return _record("log", np.log(clamped), (x,), backward_fn)


def relu(x: Tensor) -> Tensor:
    """Elementwise ``max(x, 0)``; the gradient at exactly 0 is 0."""
    mask = x.data > 0
    if _activation_log is not None:
        _activation_log.append(mask.copy())
    return _record("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


@contextmanager
def record_activation_patterns() -> Iterator[list[Array]]:
    """Collect the ReLU masks and max-pool winners evaluated inside the block.

    The gradient checker compares patterns across perturbed forward passes to
    detect coordinates whose finite-difference stencil crosses a kink.
    """
    global _activation_log  # noqa: PLW0603
    previous = _activation_log
    patterns: list[Array] = []
    _activation_log = patterns
    try:
        yield patterns
    finally:
        _activation_log = previous


# Reductions and reshapes


def sum(x: Tensor, axis: int | tuple[int, ...] | None = None) -> Tensor:  # noqa: A001
    """Sum over ``axis`` (all axes by default)."""
    shape = x.shape

    def backward_fn(g: Array) -> tuple[Array]:
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _record("sum", np.asarray(x.data.sum(axis=axis)), (x,), backward_fn)


def mean(x: Tensor, axis: int | tuple[int, ...] | None = None) -> Tensor:
    """Arithmetic mean over ``axis`` (all axes by default)."""
    axes = range(x.ndim) if axis is None else np.atleast_1d(axis)
    count = int(np.prod([x.shape[a] for a in axes]))
    return scale(sum(x, axis=axis), 1.0 / count)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reshape without changing values."""
    original = x.shape
    return _record("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(original),))


def flatten(x: Tensor) -> Tensor:
    """Flatten all but the leading (batch) dimension."""
    return reshape(x, (x.shape[0], -1))


def global_avg_pool(x: Tensor) -> Tensor:
    """Average each channel of an ``N x C x H x W`` tensor, giving ``N x C``."""
    _require_ndim("global_avg_pool", x, 4)
    return mean(x, axis=(2, 3))


def max_pool(x: Tensor, kernel: int = 2, stride: int | None = None) -> Tensor:
    """Spatial max pooling; ties route the gradient to the first maximum."""
    _require_ndim("max_pool", x, 4)
    stride = stride or kernel
    n, c, h, w = x.shape
    if h < kernel or w < kernel:
        msg = f"max_pool: kernel {kernel} does not fit input of shape {x.shape}"
        raise ConfigurationException(msg)
    out_h = (h - kernel) // stride + 1
    out_w = (w - kernel) // stride + 1
    windows = sliding_window_view(x.data, (kernel, kernel), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    flat = windows.reshape(n, c, out_h, out_w, kernel * kernel)
    argmax = flat.argmax(axis=-1)
    if _activation_log is not None:
        _activation_log.append(argmax.copy())
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]

    def backward_fn(g: Array) -> tuple[Array]:
        dx = np.zeros(x.shape, dtype=g.dtype)
        ni, ci, oi, oj = np.indices(argmax.shape)
        rows = oi * stride + argmax // kernel
        cols = oj * stride + argmax % kernel
        np.add.at(dx, (ni, ci, rows, cols), g)
        return (dx,)

    return _record("max_pool", np.ascontiguousarray(out), (x,), backward_fn)


# Probabilities


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, computed with per-row max subtraction."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g: Array) -> tuple[Array]:
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _record("softmax", out, (x,), backward_fn)


def log_softmax(x: Tensor) -> Tensor:
    """Log of the softmax over the last axis, without an intermediate floor."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    probs = np.exp(out)

    def backward_fn(g: Array) -> tuple[Array]:
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return _record("log_softmax", out, (x,), backward_fn)


# Layers


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-d tensors."""
    _require_ndim("matmul", a, 2)
    _require_ndim("matmul", b, 2)
    if a.shape[1] != b.shape[0]:
        msg = f"matmul: inner dimensions differ for {a.shape} and {b.shape}"
        raise ConfigurationException(msg)
    a_data, b_data = a.data, b.data
    return _record("matmul", a_data @ b_data, (a, b), lambda g: (g @ b_data.T, a_data.T @ g))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Fully connected layer ``x @ weight.T + bias``.

    Args:
        x: ``N x in_features`` input.
        weight: ``out_features x in_features`` matrix.
        bias: Optional ``out_features`` vector.
    """
    _require_ndim("linear", x, 2)
    if weight.ndim != 2 or weight.shape[1] != x.shape[1]:
        msg = f"linear: input of shape {x.shape} does not match weight of shape {weight.shape}"
        raise ConfigurationException(msg)
    if bias is not None and bias.shape != (weight.shape[0],):
        msg = f"linear: bias of shape {bias.shape} does not match weight of shape {weight.shape}"
        raise ConfigurationException(msg)
    x_data, w_data = x.data, weight.data
    out = x_data @ w_data.T
    if bias is not None:
        out = out + bias.data

    def backward_fn(g: Array) -> tuple[Array | None, ...]:
        grads: list[Array | None] = [g @ w_data, g.T @ x_data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _record("linear", out, inputs, backward_fn)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-d cross-correlation computed as patch-gather plus one matrix multiply.

    Args:
        x: ``N x Cin x H x W`` input.
        weight: ``Cout x Cin x kh x kw`` kernels.
        bias: Optional ``Cout`` vector.
        stride: Step between output positions, at least 1.
        padding: Zero padding added to both sides of each spatial axis.

    Returns:
        ``N x Cout x H' x W'`` with ``H' = (H + 2*padding - kh) // stride + 1``.

    Raises:
        ConfigurationException: On channel mismatch, invalid stride/padding, or a
            kernel larger than the padded input.
    """
    _require_ndim("conv2d", x, 4)
    _require_ndim("conv2d", weight, 4, label="weight")
    n, c_in, h, w = x.shape
    c_out, w_in, kh, kw = weight.shape
    if c_in != w_in:
        msg = f"conv2d: input channels of x {x.shape} do not match weight {weight.shape}"
        raise ConfigurationException(msg)
    if stride < 1 or padding < 0:
        msg = f"conv2d: invalid stride {stride} / padding {padding}"
        raise ConfigurationException(msg)
    if h + 2 * padding < kh or w + 2 * padding < kw:
        msg = f"conv2d: kernel {weight.shape} does not fit padded input {x.shape}"
        raise ConfigurationException(msg)
    if bias is not None and bias.shape != (c_out,):
        msg = f"conv2d: bias of shape {bias.shape} does not match weight {weight.shape}"
        raise ConfigurationException(msg)

    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (w + 2 * padding - kw) // stride + 1
    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * out_h * out_w, c_in * kh * kw)
    w_mat = weight.data.reshape(c_out, -1)
    out_mat = cols @ w_mat.T
    if bias is not None:
        out_mat = out_mat + bias.data
    out = out_mat.reshape(n, out_h, out_w, c_out).transpose(0, 3, 1, 2)

    def backward_fn(g: Array) -> tuple[Array | None, ...]:
        g_mat = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        dx: Array | None = None
        if x.requires_grad:
            dcols = (g_mat @ w_mat).reshape(n, out_h, out_w, c_in, kh, kw)
            dpadded = np.zeros(padded.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dpadded[
                        :, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride
                    ] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            dx = dpadded[:, :, padding : padding + h, padding : padding + w]
        dw = (g_mat.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        if bias is None:
            return (dx, dw)
        return (dx, dw, g_mat.sum(axis=0))

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _record("conv2d", out, inputs, backward_fn)


@dataclass
class BatchNormState:
    """Running statistics of one batch-normalization layer.

    Attributes:
        running_mean: Per-channel exponential moving average of batch means.
        running_var: Per-channel exponential moving average of (biased) batch
            variances.
        momentum: Weight of the newest batch in the moving average.
        eps: Variance floor added before the square root.
    """

    running_mean: Array
    running_var: Array
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPSILON

    @classmethod
    def initial(cls, channels: int) -> BatchNormState:
        """Zero means and unit variances in the active precision."""
        dtype = default_dtype()
        return cls(
            running_mean=np.zeros(channels, dtype=dtype), running_var=np.ones(channels, dtype=dtype)
        )


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    mode: Mode = Mode.TRAIN,
) -> Tensor:
    """Per-channel batch normalization of an ``N x C x H x W`` tensor.

    Train mode normalizes with batch statistics and updates ``state`` in place as
    ``new = (1 - momentum) * old + momentum * batch``. Eval mode uses ``state`` only.
    """
    _require_ndim("batchnorm", x, 4)
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        msg = f"batchnorm: affine shapes {gamma.shape}/{beta.shape} do not match input {x.shape}"
        raise ConfigurationException(msg)

    axes = (0, 2, 3)
    dtype: Any = x.dtype
    g_data = gamma.data.reshape(1, channels, 1, 1)
    b_data = beta.data.reshape(1, channels, 1, 1)

    if mode == Mode.TRAIN:
        batch_mean = x.data.mean(axis=axes)
        batch_var = x.data.var(axis=axes)
        inv_std = (1.0 / np.sqrt(batch_var + state.eps)).astype(dtype)
        x_hat = (x.data - batch_mean.reshape(1, channels, 1, 1)) * inv_std.reshape(
            1, channels, 1, 1
        )
        stat_dtype = state.running_mean.dtype
        state.running_mean = (
            (1 - state.momentum) * state.running_mean + state.momentum * batch_mean
        ).astype(stat_dtype)
        state.running_var = (
            (1 - state.momentum) * state.running_var + state.momentum * batch_var
        ).astype(stat_dtype)
        count = x.size // channels

        def train_backward(g: Array) -> tuple[Array, Array, Array]:
            dx_hat = g * g_data
            sum_dx_hat = dx_hat.sum(axis=axes, keepdims=True)
            sum_dx_hat_x_hat = (dx_hat * x_hat).sum(axis=axes, keepdims=True)
            dx = (inv_std.reshape(1, channels, 1, 1) / count) * (
                count * dx_hat - sum_dx_hat - x_hat * sum_dx_hat_x_hat
            )
            return (dx, (g * x_hat).sum(axis=axes), g.sum(axis=axes))

        out = g_data * x_hat + b_data
        return _record("batchnorm", out.astype(dtype), (x, gamma, beta), train_backward)

    inv_std = (1.0 / np.sqrt(state.running_var + state.eps)).astype(dtype)
    inv_std = inv_std.reshape(1, channels, 1, 1)
    x_hat = (x.data - state.running_mean.astype(dtype).reshape(1, channels, 1, 1)) * inv_std

    def eval_backward(g: Array) -> tuple[Array, Array, Array]:
        return (g * g_data * inv_std, (g * x_hat).sum(axis=axes), g.sum(axis=axes))

    out = g_data * x_hat + b_data
    return _record("batchnorm", out.astype(dtype), (x, gamma, beta), eval_backward)


def dropout(x: Tensor, p: float, mode: Mode, rng: np.random.Generator) -> Tensor:
    """Inverted dropout.

    Train mode zeroes each activation with probability ``p`` and scales survivors by
    ``1 / (1 - p)``; eval mode (and ``p == 0``) is the identity.

    Raises:
        ConfigurationException: If ``p`` is outside ``[0, 1)``.
    """
    if not 0.0 <= p < 1.0:
        msg = f"dropout: ratio {p} outside [0, 1)"
        raise ConfigurationException(msg)
    if mode == Mode.EVAL or p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return _record("dropout", x.data * mask, (x,), lambda g: (g * mask,))


def one_hot(labels: Array, num_classes: int) -> Tensor:
    """Constant ``N x K`` one-hot matrix for integer ``labels``."""
    encoded = np.zeros((len(labels), num_classes))
    encoded[np.arange(len(labels)), labels] = 1.0
    return Tensor(encoded)
