"""Declarative descriptions of backbones and auxiliary classifier branches.

A :class:`ModelSpec` lists a stem, a sequence of stages and the auxiliary heads
attached after some of those stages. Head ids follow a fixed convention: ``C1`` is
the backbone's final classifier, and auxiliary heads are numbered ``C2``, ``C3``,
... in order of decreasing attachment depth. An attachment may pin its id, so a
preset head keeps its name when shallower or deeper heads are left out.
"""

from __future__ import annotations

from collections.abc import Sequence
from enum import StrEnum
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator

from dks_lab.exceptions import ConfigurationException

FINAL_HEAD_ID = "C1"


class BlockKind(StrEnum):
    """Building-block families available to stages and heads."""

    BASIC_RESIDUAL = "basic-residual"
    PLAIN_CONV = "plain-conv"
    CLASSIFIER_HEAD = "classifier-head"


class BlockSpec(BaseModel):
    """One stage: ``num_blocks`` blocks of one kind with ``out_channels`` outputs.

    A stride-2 stage halves the spatial extent once, at its first block. For a
    classifier head ``out_channels`` is the number of classes.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: BlockKind
    out_channels: PositiveInt
    num_blocks: PositiveInt = 1
    stride: Literal[1, 2] = 1

    @model_validator(mode="after")
    def _check_classifier_head(self) -> BlockSpec:
        if self.kind == BlockKind.CLASSIFIER_HEAD and (self.stride != 1 or self.num_blocks != 1):
            msg = "a classifier-head stage has exactly one block and stride 1"
            raise ValueError(msg)
        return self


class AuxAttachment(BaseModel):
    """An auxiliary classifier fed by the output of backbone stage ``stage_index``.

    ``blocks`` lists the head's own stages; a trailing classifier-head is optional
    and is appended by the builder when missing. ``head_id`` fixes the head's name;
    when None the id follows from the head's depth rank.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    stage_index: int = Field(ge=0)
    blocks: tuple[BlockSpec, ...] = ()
    head_id: str | None = Field(default=None, pattern=r"^C([2-9]|[1-9]\d+)$")


class ModelSpec(BaseModel):
    """A staged backbone plus auxiliary heads (the attachment set A)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    input_shape: tuple[PositiveInt, PositiveInt, PositiveInt]
    stem: BlockSpec
    stages: tuple[BlockSpec, ...] = Field(min_length=1)
    num_classes: PositiveInt
    aux_attachments: tuple[AuxAttachment, ...] = ()
    dropout: float = Field(default=0.0, ge=0.0, lt=1.0)
    seed: int = Field(default=0, ge=0)

    def ordered_attachments(self) -> list[tuple[str, AuxAttachment]]:
        """Return ``(head_id, attachment)`` pairs, deepest attachment first.

        Pinned ids are kept as given; the others are ``C<rank + 2>``.
        """
        ordered = sorted(self.aux_attachments, key=lambda a: a.stage_index, reverse=True)
        return [
            (attachment.head_id or f"C{rank + 2}", attachment)
            for rank, attachment in enumerate(ordered)
        ]

    def head_ids(self) -> list[str]:
        """Return all head ids, ``C1`` first, then by decreasing attachment depth."""
        return [FINAL_HEAD_ID, *(head_id for head_id, _ in self.ordered_attachments())]

    def head_blocks(self, attachment: AuxAttachment) -> list[BlockSpec]:
        """Return the head's stages without the trailing classifier-head."""
        return [b for b in attachment.blocks if b.kind != BlockKind.CLASSIFIER_HEAD]

    def check(self) -> None:
        """Validate the structural invariants.

        Raises:
            ConfigurationException: On duplicate or out-of-range attachment points,
                misplaced classifier heads, spatial extents too small to halve, or
                a down-sampling parity violation (naming the offending head).
        """
        for index, stage in enumerate((self.stem, *self.stages)):
            if stage.kind == BlockKind.CLASSIFIER_HEAD:
                msg = f"backbone stage {index} cannot be a classifier-head"
                raise ConfigurationException(msg)

        indices = [a.stage_index for a in self.aux_attachments]
        if len(set(indices)) != len(indices):
            msg = f"auxiliary attachment stage indices must be distinct, got {indices}"
            raise ConfigurationException(msg)

        ids = [head_id for head_id, _ in self.ordered_attachments()]
        if len(set(ids)) != len(ids):
            msg = f"auxiliary head ids must be distinct, got {ids}"
            raise ConfigurationException(msg, hint="Pin every head id or none of them.")

        _check_extent(self.input_shape[1], [self.stem, *self.stages], "backbone")
        expected = count_downsamples([self.stem, *self.stages])

        for head_id, attachment in self.ordered_attachments():
            if attachment.stage_index >= len(self.stages):
                msg = (
                    f"head {head_id} attaches to stage {attachment.stage_index}, "
                    f"but the backbone has {len(self.stages)} stages"
                )
                raise ConfigurationException(msg)
            for position, block in enumerate(attachment.blocks):
                if block.kind != BlockKind.CLASSIFIER_HEAD:
                    continue
                if position != len(attachment.blocks) - 1:
                    msg = f"head {head_id}: classifier-head must be the last block"
                    raise ConfigurationException(msg)
                if block.out_channels != self.num_classes:
                    msg = (
                        f"head {head_id}: classifier-head has {block.out_channels} outputs, "
                        f"expected {self.num_classes} classes"
                    )
                    raise ConfigurationException(msg)

            path = [self.stem, *self.stages[: attachment.stage_index + 1]]
            path.extend(self.head_blocks(attachment))
            found = count_downsamples(path)
            if found != expected:
                msg = (
                    f"head {head_id} has {found} down-sampling layers on its input path, "
                    f"the final classifier has {expected}"
                )
                raise ConfigurationException(
                    msg, hint="Add or remove stride-2 stages in the auxiliary head."
                )
            _check_extent(self.input_shape[1], path, f"head {head_id}")


def count_downsamples(stages: Sequence[BlockSpec]) -> int:
    """Count stride-2 stages (including a stride-2 stem when it is listed)."""
    return sum(1 for stage in stages if stage.stride == 2)


def _check_extent(size: int, stages: Sequence[BlockSpec], label: str) -> None:
    for stage in stages:
        if stage.stride == 2:
            if size < 2:
                msg = f"{label}: stride-2 stage applied to spatial extent {size}"
                raise ConfigurationException(msg)
            size = (size + 1) // 2
