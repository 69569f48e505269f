"""The training loop and per-head evaluation.

Each epoch shuffles the training split with a generator seeded by ``(seed,
epoch)``, minimizes the composed loss with SGD, then evaluates every head on the
test split in eval mode. One :class:`MetricsRow` is appended to ``metrics.csv``
per epoch, and a final checkpoint is written when an output directory is given.
"""

from __future__ import annotations

import csv
import logging
import time
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from dks_lab.core.dataset import Dataset, corrupt_labels, iterate_batches
from dks_lab.core.losses import LossWeights, PairSet, pair_key, total_loss
from dks_lab.core.ops import Mode
from dks_lab.core.optim import SGD, lr_at
from dks_lab.core.tensor import Tensor, backward, no_grad
from dks_lab.exceptions import ConfigurationException, TrainingAbortedException
from dks_lab.models.checkpoint import save_checkpoint
from dks_lab.models.config import TrainConfig
from dks_lab.models.multihead import MultiHeadModel

logger = logging.getLogger(__name__)

METRICS_SCHEMA_VERSION = 1
METRICS_NAME = "metrics.csv"
FINAL_CHECKPOINT_NAME = "final.ckpt"
EVAL_BATCH_SIZE = 256


@dataclass
class MetricsRow:
    """Aggregates of one epoch.

    Attributes:
        epoch: One-based epoch number.
        lr: Learning rate used during the epoch.
        loss_total: Sample-weighted mean of the total loss over training batches.
        loss_c: Mean final-classifier loss.
        loss_a: Mean auxiliary loss.
        loss_s: Mean synergy loss.
        train_error: Top-1 error (%) of C1 on the training batches, in train mode.
        test_error: Top-1 error (%) of C1 on the test split, in eval mode.
        head_errors: Test top-1 error (%) per head id.
        seconds: Wall-clock duration of the epoch.
    """

    epoch: int
    lr: float
    loss_total: float
    loss_c: float
    loss_a: float
    loss_s: float
    train_error: float
    test_error: float
    head_errors: dict[str, float] = field(default_factory=dict)
    seconds: float = 0.0


def metrics_header(head_ids: Sequence[str], *, wall_clock: bool = False) -> list[str]:
    """Column names of the metrics CSV for a model with ``head_ids``."""
    columns = [
        "schema_version",
        "epoch",
        "lr",
        "loss_total",
        "loss_c",
        "loss_a",
        "loss_s",
        "train_err",
        "test_err",
    ]
    columns.extend(f"test_err_{head_id}" for head_id in head_ids)
    if wall_clock:
        columns.append("seconds")
    return columns


class MetricsWriter:
    """Append-only metrics CSV with a versioned, fixed header."""

    def __init__(self, path: Path, head_ids: Sequence[str], *, wall_clock: bool = False) -> None:
        """Create ``path`` (truncating it) and write the header."""
        self.path = path
        self.head_ids = list(head_ids)
        self.wall_clock = wall_clock
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as handle:
            csv.writer(handle).writerow(metrics_header(self.head_ids, wall_clock=wall_clock))

    def append(self, row: MetricsRow) -> None:
        """Write one row."""
        values: list[Any] = [
            METRICS_SCHEMA_VERSION,
            row.epoch,
            repr(row.lr),
            repr(row.loss_total),
            repr(row.loss_c),
            repr(row.loss_a),
            repr(row.loss_s),
            repr(row.train_error),
            repr(row.test_error),
        ]
        values.extend(repr(row.head_errors[head_id]) for head_id in self.head_ids)
        if self.wall_clock:
            values.append(f"{row.seconds:.3f}")
        with self.path.open("a", newline="", encoding="utf-8") as handle:
            csv.writer(handle).writerow(values)


@dataclass
class TrainResult:
    """What :func:`train` produces."""

    model: MultiHeadModel
    metrics: list[MetricsRow]
    checkpoints: list[Path] = field(default_factory=list)


def evaluate(
    model: MultiHeadModel, dataset: Dataset, batch_size: int = EVAL_BATCH_SIZE
) -> dict[str, float]:
    """Top-1 error (%) of every head on ``dataset``, in eval mode.

    Argmax ties resolve to the lowest class index.
    """
    wrong = dict.fromkeys(model.head_ids, 0)
    with no_grad():
        for images, labels in iterate_batches(dataset, batch_size):
            logits = model.forward_all(Tensor(images), Mode.EVAL)
            for head_id, head_logits in zip(model.head_ids, logits, strict=True):
                wrong[head_id] += int(np.sum(head_logits.data.argmax(axis=1) != labels))
    count = max(len(dataset), 1)
    return {head_id: 100.0 * errors / count for head_id, errors in wrong.items()}


def _check_batching(dataset: Dataset, batch_size: int) -> None:
    if len(dataset) == 0:
        msg = "the training split is empty"
        raise ConfigurationException(msg)
    if batch_size < 2:
        msg = f"batch normalization needs batches of at least 2 samples, got {batch_size}"
        raise ConfigurationException(msg)
    if len(dataset) % batch_size == 1:
        msg = (
            f"{len(dataset)} training samples with batch size {batch_size} leave a final "
            "batch of 1, which batch normalization cannot normalize"
        )
        raise ConfigurationException(msg, hint="Change train.batch_size by one.")


def train(
    model: MultiHeadModel,
    train_set: Dataset,
    test_set: Dataset,
    config: TrainConfig,
    *,
    pairs: PairSet | None = None,
    out_dir: Path | None = None,
    metadata: dict[str, Any] | None = None,
) -> TrainResult:
    """Train ``model`` and evaluate it after every epoch.

    Args:
        model: Model to train in place.
        train_set: Training split; labels are corrupted first when
            ``config.noise_ratio`` > 0.
        test_set: Split evaluated after every epoch.
        config: Optimization protocol and loss weights.
        pairs: Knowledge matching pairs; empty for the baseline and DS schemes.
        out_dir: Where to write ``metrics.csv`` and checkpoints; nothing is
            written when None.
        metadata: Extra provenance stored in checkpoint manifests.

    Returns:
        The trained model, one metrics row per epoch and the checkpoint paths.

    Raises:
        ConfigurationException: On an unusable batch size or a pair naming a head
            the model does not have.
        TrainingAbortedException: When the loss becomes non-finite.
    """
    pairs = pairs if pairs is not None else PairSet.empty()
    _check_batching(train_set, config.batch_size)
    for pair in pairs:
        unknown = [head_id for head_id in pair if head_id not in model.head_ids]
        if unknown:
            msg = f"pair {pair_key(pair)} references heads {unknown} the model does not have"
            raise ConfigurationException(msg, hint=f"Model heads: {', '.join(model.head_ids)}")

    train_set = corrupt_labels(train_set, config.noise_ratio, config.seed)
    weights = LossWeights.from_config(config.loss.alpha, config.loss.beta)
    optimizer = SGD(
        model.parameters(),
        momentum=config.momentum,
        nesterov=config.nesterov,
        weight_decay=config.weight_decay,
    )
    writer = None
    if out_dir is not None:
        writer = MetricsWriter(
            out_dir / METRICS_NAME, model.head_ids, wall_clock=config.log_wall_clock
        )

    logger.info(
        "Training heads %s with %d pairs for %d epochs on %d samples",
        model.head_ids,
        len(pairs),
        config.epochs,
        len(train_set),
    )
    rows: list[MetricsRow] = []
    checkpoints: list[Path] = []
    for epoch in range(config.epochs):
        started = time.perf_counter()
        lr = lr_at(epoch, config.lr0, config.lr_decay_factor, config.lr_decay_epochs)
        rng = np.random.default_rng([config.seed, epoch])
        sums = dict.fromkeys(("total", "c", "a", "s"), 0.0)
        train_wrong = 0

        for batch, (images, labels) in enumerate(
            iterate_batches(train_set, config.batch_size, rng, augment=config.augment)
        ):
            optimizer.zero_grad()
            logits = model.forward_all(Tensor(images), Mode.TRAIN)
            loss, report = total_loss(
                labels,
                logits,
                weights,
                pairs,
                model.head_ids,
                rescale_pairs=config.loss.rescale_pairs,
            )
            if not np.isfinite(report.total):
                raise TrainingAbortedException(epoch + 1, batch, report.total)
            backward(loss)
            optimizer.step(lr)

            size = len(labels)
            sums["total"] += report.total * size
            sums["c"] += report.l_c * size
            sums["a"] += report.l_a * size
            sums["s"] += report.l_s * size
            train_wrong += int(np.sum(logits[0].data.argmax(axis=1) != labels))
            logger.debug("epoch %d batch %d loss %.6f", epoch + 1, batch, report.total)

        head_errors = evaluate(model, test_set)
        count = len(train_set)
        row = MetricsRow(
            epoch=epoch + 1,
            lr=lr,
            loss_total=sums["total"] / count,
            loss_c=sums["c"] / count,
            loss_a=sums["a"] / count,
            loss_s=sums["s"] / count,
            train_error=100.0 * train_wrong / count,
            test_error=head_errors[model.head_ids[0]],
            head_errors=head_errors,
            seconds=time.perf_counter() - started,
        )
        rows.append(row)
        logger.info(
            "epoch %d lr %.4g loss %.4f (c %.4f a %.4f s %.4f) train err %.2f%% "
            "test err %.2f%% (%.1fs)",
            row.epoch,
            row.lr,
            row.loss_total,
            row.loss_c,
            row.loss_a,
            row.loss_s,
            row.train_error,
            row.test_error,
            row.seconds,
        )
        if writer is not None:
            writer.append(row)
        every = config.checkpoint_every
        if out_dir is not None and every and row.epoch % every == 0:
            path = out_dir / f"epoch-{row.epoch:04d}.ckpt"
            checkpoints.append(
                save_checkpoint(model, path, metadata={**(metadata or {}), "epoch": row.epoch})
            )

    if out_dir is not None:
        final = out_dir / FINAL_CHECKPOINT_NAME
        checkpoints.append(
            save_checkpoint(model, final, metadata={**(metadata or {}), "epoch": config.epochs})
        )
    return TrainResult(model=model, metrics=rows, checkpoints=checkpoints)
