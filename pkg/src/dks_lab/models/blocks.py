"""Building blocks shared by the backbone and every auxiliary classifier.

Each block applies conv -> BN -> ReLU. Down-sampling is a stride-2 convolution in
the first block of a stage; residual blocks switch to a 1x1 projection shortcut
(conv + BN) whenever the stride or channel count changes.
"""

from __future__ import annotations

import numpy as np

from dks_lab.core import ops
from dks_lab.core.tensor import Tensor
from dks_lab.exceptions import ConfigurationException
from dks_lab.models.layers import BatchNorm2d, Conv2d, Dropout, Linear, Module
from dks_lab.models.specs import BlockKind, BlockSpec, count_downsamples


class PlainConvBlock(Module):
    """3x3 conv -> BN -> ReLU (-> dropout)."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        stride: int,
        rng: np.random.Generator,
        dropout: float = 0.0,
    ) -> None:
        """Initialize the block."""
        super().__init__()
        self.conv = self.register_child(
            "conv", Conv2d(in_channels, out_channels, 3, rng, stride=stride, padding=1)
        )
        self.bn = self.register_child("bn", BatchNorm2d(out_channels))
        self.drop = self.register_child("drop", Dropout(dropout, rng)) if dropout else None

    def forward(self, x: Tensor) -> Tensor:
        """Apply the block."""
        out = ops.relu(self.bn(self.conv(x)))
        return self.drop(out) if self.drop is not None else out


class BasicResidualBlock(Module):
    """Two 3x3 conv/BN layers plus an identity or projection shortcut.

    Dropout, when enabled, follows the first conv -> BN -> ReLU.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        stride: int,
        rng: np.random.Generator,
        dropout: float = 0.0,
    ) -> None:
        """Initialize the block."""
        super().__init__()
        self.conv1 = self.register_child(
            "conv1", Conv2d(in_channels, out_channels, 3, rng, stride=stride, padding=1)
        )
        self.bn1 = self.register_child("bn1", BatchNorm2d(out_channels))
        self.drop = self.register_child("drop", Dropout(dropout, rng)) if dropout else None
        self.conv2 = self.register_child(
            "conv2", Conv2d(out_channels, out_channels, 3, rng, stride=1, padding=1)
        )
        self.bn2 = self.register_child("bn2", BatchNorm2d(out_channels))
        self.projection: tuple[Conv2d, BatchNorm2d] | None = None
        if stride != 1 or in_channels != out_channels:
            self.projection = (
                self.register_child(
                    "shortcut_conv", Conv2d(in_channels, out_channels, 1, rng, stride=stride)
                ),
                self.register_child("shortcut_bn", BatchNorm2d(out_channels)),
            )

    def shortcut(self, x: Tensor) -> Tensor:
        """Identity, or 1x1 conv + BN when the shape changes."""
        if self.projection is None:
            return x
        conv, bn = self.projection
        return bn(conv(x))

    def forward(self, x: Tensor) -> Tensor:
        """Apply ``relu(bn2(conv2(relu(bn1(conv1(x))))) + shortcut(x))``."""
        out = ops.relu(self.bn1(self.conv1(x)))
        if self.drop is not None:
            out = self.drop(out)
        out = self.bn2(self.conv2(out))
        return ops.relu(ops.add(out, self.shortcut(x)))


class ClassifierHead(Module):
    """Global average pooling followed by one fully connected layer."""

    def __init__(self, in_channels: int, num_classes: int, rng: np.random.Generator) -> None:
        """Initialize the head."""
        super().__init__()
        self.fc = self.register_child("fc", Linear(in_channels, num_classes, rng))

    def forward(self, x: Tensor) -> Tensor:
        """Map ``N x C x H x W`` features to ``N x K`` logits."""
        return self.fc(ops.global_avg_pool(x))


class Stage(Module):
    """A run of blocks of one kind; only the first block may down-sample."""

    def __init__(self, spec: BlockSpec, blocks: list[Module]) -> None:
        """Initialize the stage from already-built blocks."""
        super().__init__()
        self.spec = spec
        self.blocks = [self.register_child(f"block{i}", block) for i, block in enumerate(blocks)]

    def forward(self, x: Tensor) -> Tensor:
        """Apply every block in order.

        Raises:
            ConfigurationException: If a stride-2 stage receives a spatial extent
                below 2.
        """
        if self.spec.stride == 2 and min(x.shape[2:]) < 2:
            msg = f"stride-2 stage cannot down-sample input of shape {x.shape}"
            raise ConfigurationException(msg)
        for block in self.blocks:
            x = block(x)
        return x


def build_stage(
    spec: BlockSpec,
    in_channels: int,
    *,
    rng: np.random.Generator | None = None,
    dropout: float = 0.0,
    input_size: int | None = None,
) -> Module:
    """Build the sub-network described by ``spec``.

    Args:
        spec: Stage description.
        in_channels: Channels of the stage input.
        rng: Initialization stream; defaults to a generator seeded with 0.
        dropout: Dropout ratio inserted after the first layer of every block.
        input_size: Spatial extent of the expected input, checked when given.

    Returns:
        A :class:`Stage`, or a :class:`ClassifierHead` for ``classifier-head`` specs.

    Raises:
        ConfigurationException: If ``in_channels`` < 1 or a stride-2 stage would
            receive a spatial extent below 2.
    """
    if in_channels < 1:
        msg = f"build_stage: in_channels must be positive, got {in_channels}"
        raise ConfigurationException(msg)
    if spec.stride == 2 and input_size is not None and input_size < 2:
        msg = f"build_stage: stride-2 stage cannot down-sample spatial extent {input_size}"
        raise ConfigurationException(msg)
    rng = rng if rng is not None else np.random.default_rng(0)

    if spec.kind == BlockKind.CLASSIFIER_HEAD:
        return ClassifierHead(in_channels, spec.out_channels, rng)

    block_type = BasicResidualBlock if spec.kind == BlockKind.BASIC_RESIDUAL else PlainConvBlock
    blocks: list[Module] = []
    channels = in_channels
    for index in range(spec.num_blocks):
        stride = spec.stride if index == 0 else 1
        blocks.append(block_type(channels, spec.out_channels, stride, rng, dropout))
        channels = spec.out_channels
    return Stage(spec, blocks)


__all__ = [
    "BasicResidualBlock",
    "ClassifierHead",
    "PlainConvBlock",
    "Stage",
    "build_stage",
    "count_downsamples",
]
