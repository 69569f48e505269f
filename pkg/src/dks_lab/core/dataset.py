"""Image classification datasets: storage, batching, augmentation and generation.

On disk a dataset is a directory with ``meta.json`` (version, K, N, shape, mean,
std, split), ``images.bin`` (row-major unsigned bytes, ``N x C x H x W``) and
``labels.bin`` (little-endian unsigned 16-bit). Images stay as bytes in memory and
are normalized once, when a batch is materialized.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Iterator
from dataclasses import dataclass, replace
from enum import StrEnum
from pathlib import Path
from typing import Any, Literal

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from dks_lab.core.tensor import Array, default_dtype
from dks_lab.exceptions import ConfigurationException, DataException, DataIOException

logger = logging.getLogger(__name__)

DATASET_VERSION = 1
META_NAME = "meta.json"
IMAGES_NAME = "images.bin"
LABELS_NAME = "labels.bin"
LABEL_DTYPE = "<u2"
AUGMENT_PADDING = 4


class Split(StrEnum):
    """Dataset split tag."""

    TRAIN = "train"
    TEST = "test"


class DatasetMeta(BaseModel):
    """Contents of ``meta.json``."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    version: Literal[1] = DATASET_VERSION
    num_classes: int = Field(alias="K", ge=1)
    count: int = Field(alias="N", ge=0)
    shape: tuple[int, int, int]
    mean: list[float]
    std: list[float]
    split: Split


@dataclass
class Dataset:
    """Labelled images with per-channel normalization statistics.

    Attributes:
        images: ``N x C x H x W`` unsigned bytes.
        labels: ``N`` integer labels in ``[0, num_classes)``.
        num_classes: K.
        mean: Per-channel mean on the ``[0, 1]`` scale.
        std: Per-channel standard deviation on the ``[0, 1]`` scale.
        split: Train or test.
    """

    images: NDArray[np.uint8]
    labels: NDArray[np.int64]
    num_classes: int
    mean: NDArray[np.float64]
    std: NDArray[np.float64]
    split: Split = Split.TRAIN

    def __post_init__(self) -> None:
        self.images = np.ascontiguousarray(self.images, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.images.ndim != 4 or self.images.shape[0] != self.labels.shape[0]:
            msg = f"images {self.images.shape} do not match {self.labels.shape[0]} labels"
            raise DataException(msg)
        channels = self.images.shape[1]
        if self.mean.shape != (channels,) or self.std.shape != (channels,):
            msg = f"normalization statistics must have {channels} entries"
            raise DataException(msg)
        if np.any(self.std <= 0):
            msg = f"normalization std must be positive, got {self.std.tolist()}"
            raise DataException(msg)
        bad = np.flatnonzero((self.labels < 0) | (self.labels >= self.num_classes))
        if bad.size:
            index = int(bad[0])
            msg = (
                f"label {int(self.labels[index])} of sample {index} is outside "
                f"[0, {self.num_classes})"
            )
            raise DataException(msg)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def sample_shape(self) -> tuple[int, int, int]:
        """``(C, H, W)`` of one image."""
        c, h, w = self.images.shape[1:]
        return (c, h, w)

    def normalized(self, indices: NDArray[np.intp] | None = None) -> Array:
        """Return ``(image / 255 - mean) / std`` in the active precision."""
        images = self.images if indices is None else self.images[indices]
        dtype = default_dtype()
        scaled = images.astype(dtype) / dtype(255.0)
        mean = self.mean.astype(dtype).reshape(1, -1, 1, 1)
        std = self.std.astype(dtype).reshape(1, -1, 1, 1)
        return (scaled - mean) / std

    def with_labels(self, labels: NDArray[np.int64]) -> Dataset:
        """Copy with replaced labels."""
        return replace(self, labels=np.array(labels, dtype=np.int64))

    def save(self, path: Path) -> Path:
        """Write the dataset directory at ``path``."""
        path.mkdir(parents=True, exist_ok=True)
        meta = DatasetMeta(
            num_classes=self.num_classes,
            count=len(self),
            shape=self.sample_shape,
            mean=self.mean.tolist(),
            std=self.std.tolist(),
            split=self.split,
        )
        text = json.dumps(meta.model_dump(mode="json", by_alias=True), indent=2, sort_keys=True)
        (path / META_NAME).write_text(text + "\n", encoding="utf-8")
        (path / IMAGES_NAME).write_bytes(self.images.tobytes())
        (path / LABELS_NAME).write_bytes(self.labels.astype(LABEL_DTYPE).tobytes())
        logger.info("Wrote %s split with %d samples to %s", self.split, len(self), path)
        return path

    @classmethod
    def load(cls, path: Path) -> Dataset:
        """Read the dataset directory at ``path``.

        Raises:
            DataException: If the metadata is malformed or a label is out of range.
            DataIOException: If a file is missing or unreadable, or sizes disagree
                with the metadata.
        """
        try:
            raw: Any = json.loads((path / META_NAME).read_text(encoding="utf-8"))
            meta = DatasetMeta.model_validate(raw)
            images = np.frombuffer((path / IMAGES_NAME).read_bytes(), dtype=np.uint8)
            labels = np.frombuffer((path / LABELS_NAME).read_bytes(), dtype=LABEL_DTYPE)
        except FileNotFoundError as e:
            msg = f"Dataset directory {path} is incomplete: {e.filename} is missing"
            raise DataIOException(msg) from None
        except OSError as e:
            msg = f"Cannot read dataset directory {path}: {e}"
            raise DataIOException(msg) from e
        except (json.JSONDecodeError, UnicodeDecodeError, ValidationError) as e:
            msg = f"Dataset metadata in {path} is malformed: {e}"
            raise DataException(msg) from e

        expected = meta.count * int(np.prod(meta.shape))
        if images.size != expected or labels.size != meta.count:
            msg = (
                f"Dataset {path}: expected {meta.count} samples of shape {meta.shape}, "
                f"found {images.size} image bytes and {labels.size} labels"
            )
            raise DataIOException(msg)
        dataset = cls(
            images=images.reshape(meta.count, *meta.shape),
            labels=labels.astype(np.int64),
            num_classes=meta.num_classes,
            mean=np.asarray(meta.mean),
            std=np.asarray(meta.std),
            split=meta.split,
        )
        logger.info("Loaded %s split with %d samples from %s", dataset.split, len(dataset), path)
        return dataset


def channel_stats(images: NDArray[np.uint8]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Per-channel mean and std of ``images`` on the ``[0, 1]`` scale."""
    scaled = images.astype(np.float64) / 255.0
    mean = scaled.mean(axis=(0, 2, 3))
    std = scaled.std(axis=(0, 2, 3))
    return mean, np.where(std > 0, std, 1.0)


def load_split_pair(root: Path) -> tuple[Dataset, Dataset]:
    """Load ``root/train`` and ``root/test``."""
    return Dataset.load(root / Split.TRAIN), Dataset.load(root / Split.TEST)


def augment_batch(x: Array, rng: np.random.Generator, padding: int = AUGMENT_PADDING) -> Array:
    """Zero-pad, randomly crop back to size and randomly flip horizontally.

    Zero in normalized space is the per-channel mean pixel.
    """
    n, _, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    tops = rng.integers(0, 2 * padding + 1, size=n)
    lefts = rng.integers(0, 2 * padding + 1, size=n)
    flips = rng.random(n) < 0.5
    out = np.empty_like(x)
    for i in range(n):
        crop = padded[i, :, tops[i] : tops[i] + h, lefts[i] : lefts[i] + w]
        out[i] = crop[:, :, ::-1] if flips[i] else crop
    return out


def iterate_batches(
    dataset: Dataset,
    batch_size: int,
    rng: np.random.Generator | None = None,
    *,
    augment: bool = False,
) -> Iterator[tuple[Array, NDArray[np.int64]]]:
    """Yield normalized ``(images, labels)`` batches.

    With ``rng`` the order is a seeded permutation; without it the dataset order.
    The last, possibly smaller, batch is kept.
    """
    if batch_size < 1:
        msg = f"batch_size must be positive, got {batch_size}"
        raise ConfigurationException(msg)
    if augment and rng is None:
        msg = "augmentation needs a random generator"
        raise ConfigurationException(msg)
    order = rng.permutation(len(dataset)) if rng is not None else np.arange(len(dataset))
    for start in range(0, len(dataset), batch_size):
        indices = order[start : start + batch_size]
        images = dataset.normalized(indices)
        if augment and rng is not None:
            images = augment_batch(images, rng)
        yield images, dataset.labels[indices]


def _class_templates(
    rng: np.random.Generator, classes: int, channels: int, image_size: int
) -> NDArray[np.float64]:
    coarse = rng.normal(size=(classes, channels, 4, 4))
    coarse /= coarse.std(axis=(1, 2, 3), keepdims=True)
    repeat = -(-image_size // 4)
    fine = np.repeat(np.repeat(coarse, repeat, axis=2), repeat, axis=3)
    return fine[:, :, :image_size, :image_size]


def _render(
    rng: np.random.Generator,
    templates: NDArray[np.float64],
    labels: NDArray[np.int64],
    amplitude: float,
    noise: float,
) -> NDArray[np.uint8]:
    pixels = 128.0 + amplitude * templates[labels]
    pixels += rng.normal(0.0, noise, size=pixels.shape)
    return np.clip(np.rint(pixels), 0, 255).astype(np.uint8)


def generate_synthetic(
    classes: int,
    per_class: int,
    image_size: int = 32,
    seed: int = 0,
    *,
    test_per_class: int | None = None,
    channels: int = 3,
    amplitude: float = 48.0,
    noise: float = 24.0,
) -> tuple[Dataset, Dataset]:
    """Generate balanced train and test splits of textured class templates.

    Every class owns a coarse 4x4 Gaussian pattern, upsampled to ``image_size``;
    samples add independent pixel noise, so the classes are separable by a
    nearest-template rule. Both splits share the training split's normalization
    statistics.

    Raises:
        ConfigurationException: If ``classes`` < 2 or a size is not positive.
    """
    if classes < 2:
        msg = f"synthetic data needs at least 2 classes, got {classes}"
        raise ConfigurationException(msg)
    test_per_class = test_per_class if test_per_class is not None else max(1, per_class // 4)
    if per_class < 1 or test_per_class < 1 or image_size < 1 or channels < 1:
        msg = "synthetic data sizes must be positive"
        raise ConfigurationException(msg)

    rng = np.random.default_rng(seed)
    templates = _class_templates(rng, classes, channels, image_size)
    train_labels = rng.permutation(np.repeat(np.arange(classes), per_class))
    test_labels = rng.permutation(np.repeat(np.arange(classes), test_per_class))
    train_images = _render(rng, templates, train_labels, amplitude, noise)
    test_images = _render(rng, templates, test_labels, amplitude, noise)

    mean, std = channel_stats(train_images)
    train = Dataset(train_images, train_labels, classes, mean, std, Split.TRAIN)
    test = Dataset(test_images, test_labels, classes, mean, std, Split.TEST)
    logger.debug("Generated synthetic data: %d train / %d test samples", len(train), len(test))
    return train, test


def corrupt_labels(dataset: Dataset, ratio: float, seed: int) -> Dataset:
    """Replace ``round(ratio * N)`` labels with a different, uniformly drawn class.

    The corrupted indices are distinct and determined by ``seed``; half-way counts
    round up.

    Raises:
        ConfigurationException: If ``ratio`` is outside ``[0, 1]``, or K < 2 while
            ``ratio`` > 0.
    """
    if not 0.0 <= ratio <= 1.0:
        msg = f"label noise ratio {ratio} outside [0, 1]"
        raise ConfigurationException(msg)
    if ratio == 0.0:
        return dataset
    if dataset.num_classes < 2:
        msg = "label corruption needs at least 2 classes"
        raise ConfigurationException(msg)

    count = int(np.floor(ratio * len(dataset) + 0.5))
    rng = np.random.default_rng(seed)
    indices = rng.choice(len(dataset), size=count, replace=False)
    offsets = rng.integers(1, dataset.num_classes, size=count)
    labels = dataset.labels.copy()
    labels[indices] = (labels[indices] + offsets) % dataset.num_classes
    logger.info("Corrupted %d of %d labels (ratio %.3f)", count, len(dataset), ratio)
    return dataset.with_labels(labels)
