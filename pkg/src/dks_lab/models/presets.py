"""Desk-scale model presets.

``cifar-mini`` is a three-stage residual network with auxiliary heads after its
second and third stages (counting the stem as the first), at roughly a quarter of
the usual CIFAR widths. ``tiny-imagenet-mini`` is a four-stage network for 64x64
inputs with a stride-2 stem. Both place auxiliary heads so that every classifier
sees the same number of down-sampling layers.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass
from enum import StrEnum
from typing import Literal

from dks_lab.exceptions import ConfigurationException
from dks_lab.models.specs import AuxAttachment, BlockKind, BlockSpec, ModelSpec


class HeadStyle(StrEnum):
    """Complexity of the auxiliary branches."""

    STANDARD = "standard"
    NARROW = "narrow"
    SHALLOW = "shallow"


@dataclass(frozen=True)
class PresetOptions:
    """Knobs shared by every preset.

    Attributes:
        num_classes: Number of output classes K.
        input_shape: ``(C, H, W)`` of the input images.
        width_multiplier: Scales every stage width.
        blocks_per_stage: Residual blocks in each backbone stage.
        heads: Preset head ids to keep (``None`` keeps all, empty keeps none).
        head_style: Width and depth of the auxiliary branches.
        dropout: Ratio of the dropout layer inside every block.
        seed: Parameter initialization seed.
    """

    num_classes: int
    input_shape: tuple[int, int, int]
    width_multiplier: float = 1.0
    blocks_per_stage: int = 1
    heads: Sequence[str] | None = None
    head_style: HeadStyle = HeadStyle.STANDARD
    dropout: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class Preset:
    """A named model family.

    Attributes:
        name: Registry key.
        default_classes: K used when neither config nor dataset overrides it.
        default_input_shape: ``(C, H, W)`` the widths were chosen for.
        head_ids: Auxiliary head ids in the full preset, deepest first.
        factory: Builds the spec from :class:`PresetOptions`.
    """

    name: str
    default_classes: int
    default_input_shape: tuple[int, int, int]
    head_ids: tuple[str, ...]
    factory: Callable[[PresetOptions], ModelSpec]

    def make_spec(self, options: PresetOptions) -> ModelSpec:
        """Build the spec for ``options`` after checking the requested heads."""
        if options.heads is not None:
            unknown = sorted(set(options.heads) - set(self.head_ids))
            if unknown:
                msg = f"preset {self.name} has no auxiliary heads {unknown}"
                raise ConfigurationException(
                    msg, hint=f"Available heads: {', '.join(self.head_ids)}"
                )
        return self.factory(options)


def _width(base: int, multiplier: float) -> int:
    return max(1, round(base * multiplier))


def _residual(width: int, stride: Literal[1, 2], blocks: int) -> BlockSpec:
    return BlockSpec(
        kind=BlockKind.BASIC_RESIDUAL, out_channels=width, num_blocks=blocks, stride=stride
    )


def _head(
    options: PresetOptions, head_id: str, stage_index: int, widths: Sequence[int]
) -> AuxAttachment | None:
    if options.heads is not None and head_id not in options.heads:
        return None
    blocks = 1 if options.head_style == HeadStyle.SHALLOW else options.blocks_per_stage
    if options.head_style == HeadStyle.NARROW:
        widths = [max(1, w // 2) for w in widths]
    return AuxAttachment(
        stage_index=stage_index,
        head_id=head_id,
        blocks=tuple(_residual(w, 2, blocks) for w in widths),
    )


def _spec(
    options: PresetOptions,
    stem: BlockSpec,
    stages: Sequence[BlockSpec],
    heads: Sequence[AuxAttachment | None],
) -> ModelSpec:
    return ModelSpec(
        input_shape=options.input_shape,
        stem=stem,
        stages=tuple(stages),
        num_classes=options.num_classes,
        aux_attachments=tuple(h for h in heads if h is not None),
        dropout=options.dropout,
        seed=options.seed,
    )


def cifar_mini(options: PresetOptions) -> ModelSpec:
    """Three residual stages of widths 8/16/32 (times the multiplier).

    C2 attaches after stage 1 with one extra stride-2 stage; C3 attaches after
    stage 0 with two.
    """
    w0, w1, w2 = (_width(base, options.width_multiplier) for base in (8, 16, 32))
    n = options.blocks_per_stage
    stem = BlockSpec(kind=BlockKind.PLAIN_CONV, out_channels=w0)
    stages = [_residual(w0, 1, n), _residual(w1, 2, n), _residual(w2, 2, n)]
    heads = [_head(options, "C2", 1, [w2]), _head(options, "C3", 0, [w1, w2])]
    return _spec(options, stem, stages, heads)


def tiny_imagenet_mini(options: PresetOptions) -> ModelSpec:
    """Stride-2 stem and four residual stages of widths 16/32/64/128."""
    w0, w1, w2, w3 = (_width(base, options.width_multiplier) for base in (16, 32, 64, 128))
    n = options.blocks_per_stage
    stem = BlockSpec(kind=BlockKind.PLAIN_CONV, out_channels=w0, stride=2)
    stages = [_residual(w0, 1, n), _residual(w1, 2, n), _residual(w2, 2, n), _residual(w3, 2, n)]
    heads = [_head(options, "C2", 2, [w3]), _head(options, "C3", 1, [w2, w3])]
    return _spec(options, stem, stages, heads)


PRESETS: dict[str, Preset] = {
    "cifar-mini": Preset("cifar-mini", 10, (3, 32, 32), ("C2", "C3"), cifar_mini),
    "tiny-imagenet-mini": Preset(
        "tiny-imagenet-mini", 200, (3, 64, 64), ("C2", "C3"), tiny_imagenet_mini
    ),
}


def resolve_preset(name: str) -> Preset:
    """Look up a preset by name.

    Raises:
        ConfigurationException: If ``name`` is not registered.
    """
    try:
        return PRESETS[name]
    except KeyError:
        msg = f"Unknown model preset '{name}'"
        raise ConfigurationException(msg, hint=f"Choose one of: {', '.join(PRESETS)}") from None
