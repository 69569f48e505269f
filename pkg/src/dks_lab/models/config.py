"""Run configuration files.

Configs are UTF-8 JSON documents validated by the pydantic models below. Every
model forbids unknown keys, so a typo in an ablation config fails the run instead
of silently falling back to a default.
"""

from __future__ import annotations

import json
from enum import StrEnum
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from dks_lab.core.losses import Strategy
from dks_lab.exceptions import ConfigurationException
from dks_lab.models.presets import HeadStyle

CONFIG_VERSION = 1
RESOLVED_CONFIG_NAME = "resolved_config.json"


class Scheme(StrEnum):
    """Training scheme: plain, deeply supervised, or with knowledge synergy."""

    BASELINE = "baseline"
    DS = "ds"
    DKS = "dks"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class LossConfig(_Strict):
    """Loss weights.

    ``alpha`` maps auxiliary head ids to weights and ``beta`` maps ``"Cm->Cn"`` pair
    keys to weights; a scalar applies to every head or pair. Missing entries are 1.
    """

    alpha: float | dict[str, float] = 1.0
    beta: float | dict[str, float] = 1.0
    rescale_pairs: bool = False

    @model_validator(mode="after")
    def _check_non_negative(self) -> LossConfig:
        for label, value in (("alpha", self.alpha), ("beta", self.beta)):
            values = value.values() if isinstance(value, dict) else [value]
            if any(not v >= 0.0 or v == float("inf") for v in values):
                msg = f"loss.{label} weights must be finite and non-negative"
                raise ValueError(msg)
        return self


class TrainConfig(_Strict):
    """Optimization protocol.

    ``lr_decay_epochs`` is either a list of milestones or a fixed period; the
    learning rate is divided by ``lr_decay_factor`` at each boundary.
    """

    epochs: int = Field(default=15, ge=0)
    batch_size: int = Field(default=64, ge=2)
    lr0: float = Field(default=0.1, gt=0.0)
    lr_decay_factor: float = Field(default=10.0, ge=1.0)
    lr_decay_epochs: list[int] | int | None = None
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    nesterov: bool = False
    weight_decay: float = Field(default=1e-4, ge=0.0)
    seed: int = Field(default=0, ge=0)
    loss: LossConfig = LossConfig()
    noise_ratio: float = Field(default=0.0, ge=0.0, le=1.0)
    augment: bool = False
    checkpoint_every: int | None = Field(default=None, ge=1)
    log_wall_clock: bool = False

    @model_validator(mode="after")
    def _check_schedule(self) -> TrainConfig:
        schedule = self.lr_decay_epochs
        if isinstance(schedule, int) and schedule < 1:
            msg = "lr_decay_epochs period must be positive"
            raise ValueError(msg)
        if isinstance(schedule, list) and (
            any(m < 1 for m in schedule) or schedule != sorted(set(schedule))
        ):
            msg = "lr_decay_epochs milestones must be positive and strictly increasing"
            raise ValueError(msg)
        return self


class ModelConfig(_Strict):
    """Model preset and overrides; ``num_classes`` and ``image_size`` default to the data."""

    preset: Literal["cifar-mini", "tiny-imagenet-mini"] = "cifar-mini"
    num_classes: int | None = Field(default=None, ge=2)
    image_size: int | None = Field(default=None, ge=1)
    width_multiplier: float = Field(default=1.0, gt=0.0)
    blocks_per_stage: int = Field(default=1, ge=1)
    heads: list[str] | None = None
    head_style: HeadStyle = HeadStyle.STANDARD
    dropout: float = Field(default=0.0, ge=0.0, lt=1.0)
    seed: int = Field(default=0, ge=0)


class DataConfig(_Strict):
    """Where training data comes from."""

    source: Literal["synthetic", "directory"] = "synthetic"
    classes: int = Field(default=4, ge=2)
    per_class: int = Field(default=256, ge=1)
    test_per_class: int | None = Field(default=None, ge=1)
    image_size: int = Field(default=32, ge=4)
    seed: int = Field(default=0, ge=0)
    path: Path | None = None

    @model_validator(mode="after")
    def _check_path(self) -> DataConfig:
        if self.source == "directory" and self.path is None:
            msg = "data.path is required when data.source is 'directory'"
            raise ValueError(msg)
        return self


class RunConfig(_Strict):
    """One training run: scheme, model, optimization protocol and data."""

    version: Literal[1] = CONFIG_VERSION
    scheme: Scheme = Scheme.DKS
    strategy: Strategy = Strategy.BI_DIRECTIONAL
    pairs: list[tuple[str, str]] | None = None
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    data: DataConfig = DataConfig()
    output_dir: Path = Path("runs/default")
    precision: Literal[32, 64] = 32

    @model_validator(mode="after")
    def _check_scheme(self) -> RunConfig:
        if self.scheme == Scheme.BASELINE and self.model.heads:
            msg = "scheme 'baseline' trains without auxiliary heads; remove model.heads"
            raise ValueError(msg)
        if self.scheme != Scheme.DKS and self.pairs is not None:
            msg = f"scheme '{self.scheme}' has no knowledge matching; remove pairs"
            raise ValueError(msg)
        if self.scheme == Scheme.DKS:
            if self.strategy == Strategy.CUSTOM and not self.pairs:
                msg = "strategy 'custom' requires a non-empty pairs list"
                raise ValueError(msg)
            if self.strategy != Strategy.CUSTOM and self.pairs is not None:
                msg = f"pairs are only allowed with strategy 'custom', not '{self.strategy}'"
                raise ValueError(msg)
        return self

    def aux_heads(self) -> list[str] | None:
        """Preset head ids to build: none for baseline, else ``model.heads``."""
        return [] if self.scheme == Scheme.BASELINE else self.model.heads

    def with_overrides(
        self,
        *,
        seed: int | None = None,
        output_dir: Path | None = None,
        precision: int | None = None,
    ) -> RunConfig:
        """Apply command-line overrides; ``seed`` sets both model and train seeds."""
        updated = self
        if precision is not None:
            updated = parse_run_config(
                {**updated.model_dump(mode="json"), "precision": precision}, "--precision"
            )
        if seed is not None:
            updated = updated.model_copy(
                update={
                    "model": updated.model.model_copy(update={"seed": seed}),
                    "train": updated.train.model_copy(update={"seed": seed}),
                }
            )
        if output_dir is not None:
            updated = updated.model_copy(update={"output_dir": output_dir})
        return updated

    def dump(self) -> str:
        """Serialize with sorted keys, as written to ``resolved_config.json``."""
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def _format_errors(error: ValidationError) -> str:
    lines = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{location}: {item['msg']}")
    return "; ".join(lines)


def parse_run_config(raw: dict[str, Any], source: str = "<config>") -> RunConfig:
    """Validate a decoded config document.

    Raises:
        ConfigurationException: With one ``field: message`` entry per problem.
    """
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        msg = f"Invalid config {source}: {_format_errors(e)}"
        raise ConfigurationException(msg) from e


def load_run_config(path: Path) -> RunConfig:
    """Read and validate the JSON config at ``path``.

    Raises:
        ConfigurationException: If the file is missing, not JSON, or invalid.
    """
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        msg = f"Config file not found: {path}"
        raise ConfigurationException(msg) from None
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        msg = f"Config file {path} is not valid UTF-8 JSON: {e}"
        raise ConfigurationException(msg) from e
    if not isinstance(raw, dict):
        msg = f"Config file {path} must contain a JSON object"
        raise ConfigurationException(msg)
    return parse_run_config(raw, str(path))


def write_resolved_config(config: RunConfig, directory: Path) -> Path:
    """Write the effective config next to a run's artifacts."""
    directory.mkdir(parents=True, exist_ok=True)
    target = directory / RESOLVED_CONFIG_NAME
    target.write_text(config.dump(), encoding="utf-8")
    return target
