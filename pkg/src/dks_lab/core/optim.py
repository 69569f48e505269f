"""SGD with momentum, optional Nesterov correction and L2 weight decay.

Only trainable tensors are updated; BN running statistics are buffers and never
reach the optimizer.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from dks_lab.core.tensor import Array, Tensor


def sgd_step(
    params: Sequence[Tensor],
    velocities: Sequence[Array],
    lr: float,
    momentum: float = 0.0,
    *,
    nesterov: bool = False,
    weight_decay: float = 0.0,
) -> None:
    """Update ``params`` and ``velocities`` in place.

    ``g = grad + weight_decay * theta``, ``v = momentum * v + g``, then
    ``theta -= lr * (g + momentum * v)`` with Nesterov or ``theta -= lr * v`` without.
    A parameter without a gradient is treated as having a zero gradient.
    """
    for tensor, velocity in zip(params, velocities, strict=True):
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        g = grad + weight_decay * tensor.data
        velocity *= momentum
        velocity += g
        step = g + momentum * velocity if nesterov else velocity
        tensor.data -= (lr * step).astype(tensor.data.dtype)


@dataclass
class SGD:
    """Optimizer state: one velocity buffer per parameter."""

    params: list[Tensor]
    momentum: float = 0.9
    nesterov: bool = False
    weight_decay: float = 0.0
    velocities: list[Array] = field(init=False)

    def __post_init__(self) -> None:
        self.velocities = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        """Apply one update with learning rate ``lr``."""
        sgd_step(
            self.params,
            self.velocities,
            lr,
            self.momentum,
            nesterov=self.nesterov,
            weight_decay=self.weight_decay,
        )

    def zero_grad(self) -> None:
        """Reset every parameter gradient."""
        for p in self.params:
            p.zero_grad()


def lr_at(
    epoch: int,
    lr0: float,
    decay_factor: float,
    decay_epochs: Sequence[int] | int | None,
) -> float:
    """Piecewise-constant learning rate.

    Args:
        epoch: Zero-based epoch.
        lr0: Initial learning rate.
        decay_factor: Divisor applied at each boundary.
        decay_epochs: Milestones, a fixed period, or None for a constant rate.
    """
    if decay_epochs is None:
        drops = 0
    elif isinstance(decay_epochs, int):
        drops = epoch // decay_epochs
    else:
        drops = sum(1 for milestone in decay_epochs if epoch >= milestone)
    return lr0 / decay_factor**drops
