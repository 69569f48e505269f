"""Tensors and the define-by-run computation graph.

Every differentiable operation in :mod:`dks_lab.core.ops` records a :class:`Node`
on its output tensor. Nodes receive a monotonically increasing sequence number at
creation, so sorting the nodes reachable from a loss by that number yields a
topological order (inputs always exist before the operations that consume them).
:func:`backward` walks that order in reverse and accumulates gradients into leaf
tensors.

Precision is a process-wide switch: 32-bit for training, 64-bit for the
finite-difference and Monte-Carlo verification suites.
"""

from __future__ import annotations

import itertools
from collections.abc import Callable, Iterator, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from dks_lab.exceptions import ConfigurationException, UsageException

Array = NDArray[Any]
BackwardFn = Callable[[Array], Sequence[Array | None]]

_PRECISIONS: dict[int, type[np.floating[Any]]] = {32: np.float32, 64: np.float64}
_sequence = itertools.count()


class _Settings:
    dtype: type[np.floating[Any]] = np.float32
    grad_enabled: bool = True


def set_precision(bits: int) -> None:
    """Set the floating-point width used for newly created tensors.

    Args:
        bits: 32 or 64.

    Raises:
        ConfigurationException: If ``bits`` is not 32 or 64.
    """
    if bits not in _PRECISIONS:
        msg = f"Unsupported precision {bits}; expected 32 or 64"
        raise ConfigurationException(msg)
    _Settings.dtype = _PRECISIONS[bits]


def get_precision() -> int:
    """Return the active floating-point width in bits."""
    return 64 if _Settings.dtype is np.float64 else 32


def default_dtype() -> type[np.floating[Any]]:
    """Return the numpy dtype for the active precision."""
    return _Settings.dtype


@contextmanager
def precision(bits: int) -> Iterator[None]:
    """Temporarily switch the active precision."""
    previous = get_precision()
    set_precision(bits)
    try:
        yield
    finally:
        set_precision(previous)


def is_grad_enabled() -> bool:
    """Return whether operations currently record graph nodes."""
    return _Settings.grad_enabled


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (evaluation, Monte-Carlo sampling)."""
    previous = _Settings.grad_enabled
    _Settings.grad_enabled = False
    try:
        yield
    finally:
        _Settings.grad_enabled = previous


@dataclass(eq=False)
class Node:
    """One recorded operation.

    Attributes:
        op: Operation name, for debugging and graph inspection.
        inputs: Input tensors in the order ``backward_fn`` returns their gradients.
        backward_fn: Maps the output gradient to one gradient (or None) per input.
            Activations needed by the backward pass live in its closure.
        seq: Creation order; a node's inputs always have smaller sequence numbers.
    """

    op: str
    inputs: tuple[Tensor, ...]
    backward_fn: BackwardFn
    seq: int = field(default_factory=lambda: next(_sequence))


class Tensor:
    """A dense n-dimensional array that can take part in a recorded graph.

    Attributes:
        data: Contiguous row-major numpy buffer.
        requires_grad: Whether gradients should be accumulated for this tensor.
        grad: Gradient buffer of the same shape as ``data`` (None until populated).
        node: The operation that produced this tensor, or None for leaves.
        name: Optional label, used for parameters.
        retains_grad: Also populate ``grad`` on a non-leaf tensor during backward.
    """

    __slots__ = ("data", "grad", "name", "node", "requires_grad", "retains_grad")

    def __init__(
        self,
        data: ArrayLike,
        *,
        requires_grad: bool = False,
        name: str = "",
        dtype: Any = None,
    ) -> None:
        """Initialize a leaf tensor.

        Args:
            data: Values; converted without copying when already contiguous and of
                the requested dtype.
            requires_grad: Whether to accumulate gradients into this tensor.
            name: Optional label.
            dtype: Explicit dtype; defaults to the active precision.
        """
        array = np.asarray(data, dtype=dtype if dtype is not None else default_dtype())
        self.data: Array = array if array.flags.c_contiguous else np.ascontiguousarray(array)
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self.node: Node | None = None
        self.name = name
        self.retains_grad = False

    @property
    def shape(self) -> tuple[int, ...]:
        """Shape of the underlying buffer."""
        return self.data.shape

    @property
    def ndim(self) -> int:
        """Number of dimensions."""
        return self.data.ndim

    @property
    def size(self) -> int:
        """Number of scalar elements."""
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype[Any]:
        """Scalar dtype of the buffer."""
        return self.data.dtype

    def item(self) -> float:
        """Return the value of a single-element tensor as a Python float."""
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> Array:
        """Return the underlying buffer."""
        return self.data

    def zero_grad(self) -> None:
        """Reset the gradient buffer to zeros."""
        self.grad = np.zeros_like(self.data)

    def detach(self) -> Tensor:
        """Return a graph-free tensor sharing this tensor's values."""
        return detach(self)

    def accumulate_grad(self, grad: Array) -> None:
        """Add ``grad`` into the gradient buffer."""
        grad = np.asarray(grad, dtype=self.data.dtype).reshape(self.data.shape)
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def __add__(self, other: Tensor) -> Tensor:
        from dks_lab.core import ops

        return ops.add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        from dks_lab.core import ops

        return ops.sub(self, other)

    def __mul__(self, other: Tensor | float) -> Tensor:
        from dks_lab.core import ops

        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    def __rmul__(self, other: float) -> Tensor:
        from dks_lab.core import ops

        return ops.scale(self, float(other))

    def __neg__(self) -> Tensor:
        from dks_lab.core import ops

        return ops.scale(self, -1.0)

    def __repr__(self) -> str:
        grad_flag = ", requires_grad=True" if self.requires_grad else ""
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad_flag}{label})"


class _DetachTape:
    recording: list[Array] | None = None
    replaying: list[Array] | None = None
    position: int = 0


def detach(x: Tensor) -> Tensor:
    """Return a tensor sharing ``x``'s values with no graph linkage.

    Gradients flowing into the result never reach the producers of ``x``. Inside
    :func:`freeze_detached` the values are recorded, or replayed in call order.
    """
    data = x.data
    if _DetachTape.replaying is not None:
        if _DetachTape.position >= len(_DetachTape.replaying):
            msg = "detach() called more often than during the recorded pass"
            raise UsageException(msg)
        data = _DetachTape.replaying[_DetachTape.position]
        _DetachTape.position += 1
        if data.shape != x.shape:
            msg = f"replayed detached value has shape {data.shape}, expected {x.shape}"
            raise UsageException(msg)
    elif _DetachTape.recording is not None:
        _DetachTape.recording.append(data.copy())
    return Tensor(data, dtype=data.dtype)


@contextmanager
def freeze_detached(values: list[Array] | None = None) -> Iterator[list[Array]]:
    """Record every detached value, or substitute previously recorded ones.

    Without ``values`` the block records what :func:`detach` returns and yields the
    list. With ``values`` each :func:`detach` call returns the next recorded array
    instead, so stop-gradient targets stay the constants of the recorded pass.
    """
    previous = (_DetachTape.recording, _DetachTape.replaying, _DetachTape.position)
    tape: list[Array] = [] if values is None else values
    if values is None:
        _DetachTape.recording, _DetachTape.replaying = tape, None
    else:
        _DetachTape.recording, _DetachTape.replaying = None, tape
    _DetachTape.position = 0
    try:
        yield tape
    finally:
        _DetachTape.recording, _DetachTape.replaying, _DetachTape.position = previous


@dataclass
class Graph:
    """The nodes reachable from a root tensor, in topological (creation) order."""

    nodes: list[Node]

    @classmethod
    def from_root(cls, root: Tensor) -> Graph:
        """Collect every node reachable from ``root``."""
        if root.node is None:
            return cls(nodes=[])
        seen: dict[int, Node] = {}
        stack = [root.node]
        while stack:
            node = stack.pop()
            if node.seq in seen:
                continue
            seen[node.seq] = node
            stack.extend(t.node for t in node.inputs if t.node is not None and t.requires_grad)
        return cls(nodes=sorted(seen.values(), key=lambda n: n.seq))

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/dt into every reachable tensor ``t`` that requires grad.

    Leaves (and non-leaves flagged ``retains_grad``) receive gradients. Repeated
    calls without zeroing accumulate additively.

    Args:
        loss: A single-element tensor.

    Raises:
        UsageException: If ``loss`` has more than one element.
    """
    if loss.size != 1:
        msg = f"backward() needs a scalar loss, got shape {loss.shape}"
        raise UsageException(msg, hint="Reduce the tensor with ops.sum or ops.mean first.")

    seed = np.ones_like(loss.data)
    if loss.node is None:
        if loss.requires_grad:
            loss.accumulate_grad(seed)
        return
    if loss.retains_grad:
        loss.accumulate_grad(seed)

    pending: dict[int, Array] = {loss.node.seq: seed}
    for node in reversed(Graph.from_root(loss).nodes):
        grad_out = pending.pop(node.seq, None)
        if grad_out is None:
            continue
        input_grads = node.backward_fn(grad_out)
        for tensor, grad in zip(node.inputs, input_grads, strict=True):
            if grad is None or not tensor.requires_grad:
                continue
            if tensor.node is None:
                tensor.accumulate_grad(grad)
                continue
            if tensor.retains_grad:
                tensor.accumulate_grad(grad)
            previous = pending.get(tensor.node.seq)
            pending[tensor.node.seq] = grad if previous is None else previous + grad
