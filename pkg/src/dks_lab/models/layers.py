"""Parameterized layers and the Module container.

Parameters are registered explicitly by name, so enumeration order is the
registration order and names are stable across builds of the same spec. Weights
use fan-in scaled Gaussian initialization (std = sqrt(2 / fan_in)); biases and BN
shifts start at zero, BN scales at one.
"""

from __future__ import annotations

from collections.abc import Iterator
from typing import TypeVar

import numpy as np

from dks_lab.core import ops
from dks_lab.core.ops import BatchNormState, Mode
from dks_lab.core.tensor import Tensor

M = TypeVar("M", bound="Module")


def he_normal(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator) -> Tensor:
    """Draw a trainable tensor from N(0, 2 / fan_in)."""
    return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), requires_grad=True)


class Module:
    """A node in the model tree owning parameters, BN states and child modules.

    Attributes:
        mode: Current forward mode, propagated to children by :meth:`train` and
            :meth:`eval`.
    """

    def __init__(self) -> None:
        """Initialize an empty module."""
        self._parameters: dict[str, Tensor] = {}
        self._states: dict[str, BatchNormState] = {}
        self._children: dict[str, Module] = {}
        self.mode = Mode.TRAIN

    def register_parameter(self, name: str, tensor: Tensor) -> Tensor:
        """Register a trainable tensor under ``name`` and return it."""
        tensor.requires_grad = True
        self._parameters[name] = tensor
        return tensor

    def register_state(self, name: str, state: BatchNormState) -> BatchNormState:
        """Register batch-normalization running statistics under ``name``."""
        self._states[name] = state
        return state

    def register_child(self, name: str, module: M) -> M:
        """Register a child module under ``name`` and return it."""
        self._children[name] = module
        return module

    def children(self) -> Iterator[tuple[str, Module]]:
        """Iterate over direct children in registration order."""
        yield from self._children.items()

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        """Iterate over ``(dotted_name, tensor)`` for every parameter in the tree."""
        for name, tensor in self._parameters.items():
            yield f"{prefix}{name}", tensor
        for child_name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{child_name}.")

    def named_states(self, prefix: str = "") -> Iterator[tuple[str, BatchNormState]]:
        """Iterate over ``(dotted_name, state)`` for every BN state in the tree."""
        for name, state in self._states.items():
            yield f"{prefix}{name}", state
        for child_name, child in self._children.items():
            yield from child.named_states(f"{prefix}{child_name}.")

    def parameters(self) -> list[Tensor]:
        """Return every parameter in enumeration order."""
        return [tensor for _, tensor in self.named_parameters()]

    def num_parameters(self) -> int:
        """Return the number of trainable scalars."""
        return sum(tensor.size for tensor in self.parameters())

    def train(self) -> None:
        """Switch this module and its children to train mode."""
        self.set_mode(Mode.TRAIN)

    def eval(self) -> None:
        """Switch this module and its children to eval mode."""
        self.set_mode(Mode.EVAL)

    def set_mode(self, mode: Mode) -> None:
        """Set the forward mode of this module and its children."""
        self.mode = mode
        for _, child in self._children.items():
            child.set_mode(mode)

    def zero_grad(self) -> None:
        """Reset every parameter gradient to zeros."""
        for tensor in self.parameters():
            tensor.zero_grad()

    def forward(self, x: Tensor) -> Tensor:
        """Compute the module output."""
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        """Alias for :meth:`forward`."""
        return self.forward(x)


class Conv2d(Module):
    """Bias-free 2-d convolution (always followed by batch normalization)."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        *,
        stride: int = 1,
        padding: int = 0,
    ) -> None:
        """Initialize the kernel with fan-in scaled Gaussian weights."""
        super().__init__()
        self.stride = stride
        self.padding = padding
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = self.register_parameter("weight", he_normal(shape, fan_in, rng))

    def forward(self, x: Tensor) -> Tensor:
        """Convolve ``x`` with the kernel."""
        return ops.conv2d(x, self.weight, stride=self.stride, padding=self.padding)


class BatchNorm2d(Module):
    """Per-channel batch normalization with its own running statistics."""

    def __init__(self, channels: int) -> None:
        """Initialize gamma to ones, beta to zeros, running stats to (0, 1)."""
        super().__init__()
        self.gamma = self.register_parameter("gamma", Tensor(np.ones(channels)))
        self.beta = self.register_parameter("beta", Tensor(np.zeros(channels)))
        self.state = self.register_state("bn", BatchNormState.initial(channels))

    def forward(self, x: Tensor) -> Tensor:
        """Normalize ``x`` using batch (train) or running (eval) statistics."""
        return ops.batchnorm(x, self.gamma, self.beta, self.state, self.mode)


class Linear(Module):
    """Fully connected layer with bias."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator) -> None:
        """Initialize the weight with fan-in scaled Gaussian values and a zero bias."""
        super().__init__()
        self.weight = self.register_parameter(
            "weight", he_normal((out_features, in_features), in_features, rng)
        )
        self.bias = self.register_parameter("bias", Tensor(np.zeros(out_features)))

    def forward(self, x: Tensor) -> Tensor:
        """Apply ``x @ weight.T + bias``."""
        return ops.linear(x, self.weight, self.bias)


class Dropout(Module):
    """Inverted dropout with a private, seeded random stream.

    The mask stream is a child spawned from the initialization generator. Spawning
    draws nothing from the parent, and layers built earlier keep their streams
    when layers are added after them, so the backbone's masks do not depend on
    which auxiliary heads exist.
    """

    def __init__(self, p: float, rng: np.random.Generator) -> None:
        """Initialize with drop ratio ``p`` and a child stream of ``rng``."""
        super().__init__()
        self.p = p
        self.rng = rng.spawn(1)[0]

    def forward(self, x: Tensor) -> Tensor:
        """Drop activations in train mode; identity in eval mode."""
        return ops.dropout(x, self.p, self.mode, self.rng)
