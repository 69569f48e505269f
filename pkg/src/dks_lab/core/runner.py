"""Experiment orchestration: one configured run, or an ablation over many.

A run resolves its data, builds the preset model with the scheme's auxiliary
heads, derives the knowledge matching pairs, trains, and leaves
``resolved_config.json``, ``metrics.csv`` and ``final.ckpt`` in its output
directory. An ablation varies one axis of a base config over a list of values and
seeds and merges the final metrics of every run into summary CSVs.
"""

from __future__ import annotations

import csv
import logging
import re
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Any

import numpy as np

from dks_lab.core.dataset import Dataset, generate_synthetic, load_split_pair
from dks_lab.core.losses import PairSet, Strategy, build_pair_set
from dks_lab.core.tensor import precision
from dks_lab.core.trainer import MetricsRow, train
from dks_lab.exceptions import ConfigurationException
from dks_lab.models.config import (
    DataConfig,
    RunConfig,
    Scheme,
    parse_run_config,
    write_resolved_config,
)
from dks_lab.models.multihead import MultiHeadModel, build
from dks_lab.models.presets import PresetOptions, resolve_preset

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = (0, 1, 2, 3, 4)
SUMMARY_NAME = "summary.csv"
SUMMARY_MEAN_NAME = "summary_mean.csv"
_HEAD_ID = re.compile(r"C\d+")


@dataclass
class RunResult:
    """Artifacts and final metrics of one run."""

    config: RunConfig
    out_dir: Path
    head_ids: list[str]
    metrics: list[MetricsRow] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)

    @property
    def final(self) -> MetricsRow | None:
        """Metrics of the last epoch, or None when no epoch ran."""
        return self.metrics[-1] if self.metrics else None


def prepare_data(config: DataConfig) -> tuple[Dataset, Dataset]:
    """Generate or load the train and test splits described by ``config``."""
    if config.source == "directory":
        if config.path is None:
            msg = "data.path is required when data.source is 'directory'"
            raise ConfigurationException(msg)
        return load_split_pair(config.path)
    return generate_synthetic(
        config.classes,
        config.per_class,
        config.image_size,
        config.seed,
        test_per_class=config.test_per_class,
    )


def build_model(config: RunConfig, train_set: Dataset) -> MultiHeadModel:
    """Build the preset model for ``config``, sized to the training data.

    Raises:
        ConfigurationException: If the config's class count or image size
            contradicts the data, or the preset rejects the options.
    """
    preset = resolve_preset(config.model.preset)
    shape = train_set.sample_shape
    if config.model.num_classes is not None and config.model.num_classes != train_set.num_classes:
        msg = (
            f"model.num_classes is {config.model.num_classes} but the data has "
            f"{train_set.num_classes} classes"
        )
        raise ConfigurationException(msg)
    if config.model.image_size is not None and config.model.image_size != shape[1]:
        msg = f"model.image_size is {config.model.image_size} but the data is {shape[1]}x{shape[2]}"
        raise ConfigurationException(msg)
    options = PresetOptions(
        num_classes=train_set.num_classes,
        input_shape=shape,
        width_multiplier=config.model.width_multiplier,
        blocks_per_stage=config.model.blocks_per_stage,
        heads=config.aux_heads(),
        head_style=config.model.head_style,
        dropout=config.model.dropout,
        seed=config.model.seed,
    )
    return build(preset.make_spec(options))


def build_pairs(config: RunConfig, head_ids: Sequence[str]) -> PairSet:
    """Knowledge matching pairs of the scheme; empty for baseline and DS."""
    if config.scheme != Scheme.DKS:
        return PairSet.empty()
    if config.strategy == Strategy.CUSTOM:
        return PairSet.custom([(m, n) for m, n in config.pairs or []])
    return build_pair_set(head_ids, config.strategy)


def run_experiment(config: RunConfig) -> RunResult:
    """Train one configured run and write its artifacts to ``config.output_dir``.

    Raises:
        ConfigurationException: On configs that do not fit the data or preset.
        DataException: On unreadable dataset directories.
        TrainingAbortedException: When the loss becomes non-finite.
    """
    out_dir = config.output_dir
    write_resolved_config(config, out_dir)
    with precision(config.precision):
        train_set, test_set = prepare_data(config.data)
        model = build_model(config, train_set)
        pairs = build_pairs(config, model.head_ids)
        logger.info(
            "Run %s: scheme %s, heads %s, %d pairs, %d-bit",
            out_dir,
            config.scheme,
            model.head_ids,
            len(pairs),
            config.precision,
        )
        result = train(
            model,
            train_set,
            test_set,
            config.train,
            pairs=pairs,
            out_dir=out_dir,
            metadata={
                "preset": config.model.preset,
                "scheme": str(config.scheme),
                "strategy": str(config.strategy),
                "seed": config.train.seed,
            },
        )
    return RunResult(
        config=config,
        out_dir=out_dir,
        head_ids=model.head_ids,
        metrics=result.metrics,
        checkpoints=result.checkpoints,
    )


# Ablations


class AblationAxis(StrEnum):
    """Config dimension varied by an ablation."""

    STRATEGY = "strategy"
    ATTACHMENTS = "attachments"
    SCHEME = "scheme"
    NOISE = "noise"


def _attachment_heads(value: str) -> list[str]:
    heads = _HEAD_ID.findall(value)
    if "".join(heads) != value or "C1" not in heads or len(set(heads)) != len(heads):
        msg = f"attachment value {value!r} must list distinct head ids including C1, e.g. C1C2C3"
        raise ConfigurationException(msg)
    return [head for head in heads if head != "C1"]


def variant_config(
    base: RunConfig, axis: AblationAxis | str, value: str, seed: int, out_dir: Path
) -> RunConfig:
    """Derive the config of one ablation run; the result is re-validated.

    Raises:
        ConfigurationException: If ``value`` is not valid for ``axis`` or the
            derived config breaks a scheme rule.
    """
    axis = AblationAxis(axis)
    raw: dict[str, Any] = base.model_dump(mode="json")
    if axis == AblationAxis.STRATEGY:
        if value not in {s.value for s in Strategy} - {Strategy.CUSTOM.value}:
            msg = f"strategy ablation value {value!r} is not top-down, bottom-up or bi-directional"
            raise ConfigurationException(msg)
        raw.update(scheme=Scheme.DKS.value, strategy=value, pairs=None)
    elif axis == AblationAxis.ATTACHMENTS:
        raw["model"]["heads"] = _attachment_heads(value)
        if raw["scheme"] == Scheme.BASELINE.value:
            raw["scheme"] = Scheme.DKS.value
    elif axis == AblationAxis.SCHEME:
        if value not in {s.value for s in Scheme}:
            msg = f"scheme ablation value {value!r} is not baseline, ds or dks"
            raise ConfigurationException(msg)
        raw["scheme"] = value
        if value != Scheme.DKS.value:
            raw["pairs"] = None
            if raw["strategy"] == Strategy.CUSTOM.value:
                raw["strategy"] = Strategy.BI_DIRECTIONAL.value
        if value == Scheme.BASELINE.value:
            raw["model"]["heads"] = None
    else:
        try:
            raw["train"]["noise_ratio"] = float(value)
        except ValueError:
            msg = f"noise ablation value {value!r} is not a number"
            raise ConfigurationException(msg) from None

    raw["model"]["seed"] = seed
    raw["train"]["seed"] = seed
    raw["output_dir"] = str(out_dir)
    return parse_run_config(raw, f"{axis}={value}, seed {seed}")


def _summary_row(axis: str, value: str, seed: int, run: RunResult) -> dict[str, Any]:
    final = run.final
    row: dict[str, Any] = {"axis": axis, "value": value, "seed": seed, "epochs": len(run.metrics)}
    if final is not None:
        row.update(
            train_err=repr(final.train_error),
            test_err=repr(final.test_error),
            loss_total=repr(final.loss_total),
        )
        row.update({f"test_err_{h}": repr(e) for h, e in final.head_errors.items()})
    return row


def _run_dir(root: Path, axis: AblationAxis, value: str, seed: int) -> Path:
    return root / f"{axis}={value}" / f"seed-{seed}"


def _head_sort_key(column: str) -> int:
    return int(column.rsplit("C", 1)[1])


def _write_rows(path: Path, columns: list[str], rows: list[dict[str, Any]]) -> Path:
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=columns, restval="")
        writer.writeheader()
        writer.writerows(rows)
    return path


def _mean_rows(
    axis: str, values: Sequence[str], runs: list[tuple[str, RunResult]]
) -> list[dict[str, Any]]:
    rows: list[dict[str, Any]] = []
    for value in values:
        finals = [run.final for v, run in runs if v == value and run.final is not None]
        train_errors = np.array([f.train_error for f in finals], dtype=np.float64)
        test_errors = np.array([f.test_error for f in finals], dtype=np.float64)
        ddof = 1 if len(finals) > 1 else 0
        rows.append(
            {
                "axis": axis,
                "value": value,
                "runs": len(finals),
                "train_err_mean": repr(float(train_errors.mean())) if finals else "",
                "train_err_std": repr(float(train_errors.std(ddof=ddof))) if finals else "",
                "test_err_mean": repr(float(test_errors.mean())) if finals else "",
                "test_err_std": repr(float(test_errors.std(ddof=ddof))) if finals else "",
            }
        )
    return rows


@dataclass
class AblationResult:
    """Runs of an ablation and the summary files merged from them."""

    axis: AblationAxis
    runs: list[tuple[str, int, RunResult]]
    summary: Path
    summary_mean: Path
    rows: list[dict[str, Any]]
    mean_rows: list[dict[str, Any]]


def run_ablation(
    base: RunConfig,
    axis: AblationAxis | str,
    values: Sequence[str],
    *,
    seeds: Sequence[int] | None = None,
    out_dir: Path | None = None,
    jobs: int = 1,
) -> AblationResult:
    """Run ``base`` once per value and seed, then write the summaries.

    Runs land in ``out_dir/<axis>=<value>/seed-<seed>``. With ``jobs`` > 1 they are
    executed by a process pool; each run is still fully determined by its config,
    and results are merged in value-then-seed order.

    Raises:
        ConfigurationException: On an empty value list, an invalid value, or
            ``jobs`` < 1.
    """
    axis = AblationAxis(axis)
    if not values:
        msg = f"ablation over {axis} needs at least one value"
        raise ConfigurationException(msg)
    if jobs < 1:
        msg = f"jobs must be at least 1, got {jobs}"
        raise ConfigurationException(msg)
    seeds = list(seeds) if seeds else [base.train.seed]
    root = out_dir if out_dir is not None else base.output_dir
    plan = [
        (value, seed, variant_config(base, axis, value, seed, _run_dir(root, axis, value, seed)))
        for value in values
        for seed in seeds
    ]
    logger.info("Ablation over %s: %d values x %d seeds", axis, len(values), len(seeds))

    configs = [config for _, _, config in plan]
    if jobs == 1:
        results = [run_experiment(config) for config in configs]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            results = list(executor.map(run_experiment, configs))

    runs = [(value, seed, run) for (value, seed, _), run in zip(plan, results, strict=True)]
    rows = [_summary_row(str(axis), value, seed, run) for value, seed, run in runs]
    head_columns = sorted(
        {key for row in rows for key in row if key.startswith("test_err_")}, key=_head_sort_key
    )
    columns = ["axis", "value", "seed", "epochs", "train_err", "test_err", "loss_total"]
    root.mkdir(parents=True, exist_ok=True)
    summary = _write_rows(root / SUMMARY_NAME, [*columns, *head_columns], rows)
    mean_rows = _mean_rows(str(axis), values, [(value, run) for value, _, run in runs])
    summary_mean = _write_rows(
        root / SUMMARY_MEAN_NAME,
        [
            "axis",
            "value",
            "runs",
            "train_err_mean",
            "train_err_std",
            "test_err_mean",
            "test_err_std",
        ],
        mean_rows,
    )
    logger.info("Wrote %s and %s", summary, summary_mean)
    return AblationResult(
        axis=axis,
        runs=runs,
        summary=summary,
        summary_mean=summary_mean,
        rows=rows,
        mean_rows=mean_rows,
    )
