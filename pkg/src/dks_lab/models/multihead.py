"""Multi-head models: a staged backbone with auxiliary classifier branches.

The backbone (stem, stages and the final classifier ``C1``) owns the parameters
W_c; each auxiliary head owns its own blocks, BN statistics and classifier (one
member of W_a). Heads read the backbone feature map produced by their attachment
stage, so the trunk is evaluated once per forward pass.
"""

from __future__ import annotations

import logging
from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np

from dks_lab.core.ops import Mode
from dks_lab.core.tensor import Tensor
from dks_lab.exceptions import ConfigurationException
from dks_lab.models.blocks import ClassifierHead, build_stage
from dks_lab.models.layers import Module
from dks_lab.models.specs import FINAL_HEAD_ID, AuxAttachment, ModelSpec

logger = logging.getLogger(__name__)

BACKBONE_ROLE = "backbone"
BN_STAT_ROLE = "bn_running_stat"


def aux_role(head_id: str) -> str:
    """Return the provenance tag for parameters of auxiliary head ``head_id``."""
    return f"aux:{head_id}"


@dataclass(frozen=True)
class HeadInfo:
    """Metadata for one classifier.

    Attributes:
        head_id: ``C1`` for the final classifier, ``C2``, ``C3``, ... otherwise.
        stage_index: Backbone stage feeding the head (last stage for ``C1``).
        depth_rank: 0 for the deepest classifier, increasing towards the input.
    """

    head_id: str
    stage_index: int
    depth_rank: int


class Backbone(Module):
    """Stem, stages and the final classifier C1."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator) -> None:
        """Build the backbone from ``spec``."""
        super().__init__()
        channels, size = spec.input_shape[0], spec.input_shape[1]
        self.stem = self.register_child(
            "stem",
            build_stage(spec.stem, channels, rng=rng, dropout=spec.dropout, input_size=size),
        )
        channels = spec.stem.out_channels
        size = (size + 1) // 2 if spec.stem.stride == 2 else size
        self.stages: list[Module] = []
        for index, stage_spec in enumerate(spec.stages):
            stage = build_stage(
                stage_spec, channels, rng=rng, dropout=spec.dropout, input_size=size
            )
            self.stages.append(self.register_child(f"stage{index}", stage))
            channels = stage_spec.out_channels
            size = (size + 1) // 2 if stage_spec.stride == 2 else size
        self.classifier = self.register_child(
            "classifier", ClassifierHead(channels, spec.num_classes, rng)
        )

    def features(self, x: Tensor) -> list[Tensor]:
        """Return the output of every stage, in order."""
        outputs: list[Tensor] = []
        x = self.stem(x)
        for stage in self.stages:
            x = stage(x)
            outputs.append(x)
        return outputs

    def forward(self, x: Tensor) -> Tensor:
        """Return the C1 logits."""
        return self.classifier(self.features(x)[-1])


class AuxiliaryHead(Module):
    """An auxiliary classifier: its own stages followed by a classifier head."""

    def __init__(
        self,
        spec: ModelSpec,
        attachment: AuxAttachment,
        rng: np.random.Generator,
    ) -> None:
        """Build the head for ``attachment``."""
        super().__init__()
        channels = spec.stages[attachment.stage_index].out_channels
        self.stages: list[Module] = []
        for index, block in enumerate(spec.head_blocks(attachment)):
            stage = build_stage(block, channels, rng=rng, dropout=spec.dropout)
            self.stages.append(self.register_child(f"stage{index}", stage))
            channels = block.out_channels
        self.classifier = self.register_child(
            "classifier", ClassifierHead(channels, spec.num_classes, rng)
        )

    def forward(self, x: Tensor) -> Tensor:
        """Map attachment-point features to logits."""
        for stage in self.stages:
            x = stage(x)
        return self.classifier(x)


class MultiHeadModel(Module):
    """A backbone plus auxiliary heads; parameters are tagged by provenance."""

    def __init__(self, spec: ModelSpec) -> None:
        """Build and initialize every parameter deterministically from ``spec.seed``."""
        super().__init__()
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        self.backbone = self.register_child("backbone", Backbone(spec, rng))
        aux = self.register_child("aux", Module())
        self.heads: dict[str, AuxiliaryHead] = {}
        self.head_infos = [
            HeadInfo(FINAL_HEAD_ID, len(spec.stages) - 1, 0),
        ]
        for rank, (head_id, attachment) in enumerate(spec.ordered_attachments(), start=1):
            self.heads[head_id] = aux.register_child(
                head_id, AuxiliaryHead(spec, attachment, rng)
            )
            self.head_infos.append(HeadInfo(head_id, attachment.stage_index, rank))

    @property
    def head_ids(self) -> list[str]:
        """Head ids ordered by decreasing attachment depth (``C1`` first)."""
        return [info.head_id for info in self.head_infos]

    def role_of(self, name: str) -> str:
        """Return the provenance tag of the parameter called ``name``."""
        if name.startswith("aux."):
            return aux_role(name.split(".")[1])
        return BACKBONE_ROLE

    def tagged_parameters(self) -> Iterator[tuple[str, str, Tensor]]:
        """Iterate over ``(name, role, tensor)`` in enumeration order."""
        for name, tensor in self.named_parameters():
            yield name, self.role_of(name), tensor

    def forward_all(self, x: Tensor, mode: Mode | None = None) -> list[Tensor]:
        """Evaluate every head; see :func:`forward_all`."""
        expected = self.spec.input_shape
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            msg = f"model expects input of shape N x {expected}, got {x.shape}"
            raise ConfigurationException(msg)
        if mode is not None:
            self.set_mode(mode)

        features = self.backbone.features(x)
        logits = [self.backbone.classifier(features[-1])]
        for info in self.head_infos[1:]:
            logits.append(self.heads[info.head_id](features[info.stage_index]))
        return logits

    def forward(self, x: Tensor) -> Tensor:
        """Return the C1 logits."""
        return self.forward_all(x)[0]


def build(spec: ModelSpec) -> MultiHeadModel:
    """Validate ``spec`` and build the model.

    Raises:
        ConfigurationException: If any structural invariant of ``spec`` fails.
    """
    spec.check()
    model = MultiHeadModel(spec)
    logger.debug(
        "Built model with heads %s and %d parameters", model.head_ids, model.num_parameters()
    )
    return model


def forward_all(model: MultiHeadModel, x: Tensor, mode: Mode) -> list[Tensor]:
    """Return the logits of every head, ``C1`` first.

    Args:
        model: The model to evaluate.
        x: ``N x C x H x W`` batch matching the model's input shape.
        mode: Train (batch statistics, dropout active) or eval.

    Raises:
        ConfigurationException: If ``x`` does not match the model's input shape.
    """
    return model.forward_all(x, mode)


def strip_aux(model: MultiHeadModel) -> MultiHeadModel:
    """Return a copy of ``model`` without auxiliary heads.

    Backbone parameters and BN statistics are copied, so the result's forward pass
    equals the original's C1 output exactly.
    """
    stripped = MultiHeadModel(model.spec.model_copy(update={"aux_attachments": ()}))
    source_params = dict(model.named_parameters())
    for name, tensor in stripped.named_parameters():
        tensor.data = source_params[name].data.copy()
    source_states = dict(model.named_states())
    for name, state in stripped.named_states():
        state.running_mean = source_states[name].running_mean.copy()
        state.running_var = source_states[name].running_var.copy()
    stripped.set_mode(model.mode)
    return stripped
