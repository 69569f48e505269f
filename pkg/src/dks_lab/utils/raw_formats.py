"""Converters from standard raw dataset dumps to the on-disk dataset format.

Supported inputs:

* CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes.
* CIFAR-100 binary files: records of a coarse and a fine label byte + 3072 pixel
  bytes; the fine label is used.
* MNIST idx files (``*-images-idx3-ubyte`` / ``*-labels-idx1-ubyte``), optionally
  gzip-compressed.
"""

from __future__ import annotations

import gzip
import logging
from collections.abc import Sequence
from enum import StrEnum
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from dks_lab.core.dataset import Dataset, Split, channel_stats
from dks_lab.exceptions import DataException, DataIOException

logger = logging.getLogger(__name__)

CIFAR_SHAPE = (3, 32, 32)
CIFAR_PIXELS = 3 * 32 * 32
IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


class RawFormat(StrEnum):
    """Raw dump layouts accepted by ``convert-data``."""

    CIFAR10 = "cifar10"
    CIFAR100 = "cifar100"
    MNIST = "mnist"


def _read(path: Path) -> bytes:
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        msg = f"Raw data file not found: {path}"
        raise DataIOException(msg) from None
    except OSError as e:
        msg = f"Cannot read raw data file {path}: {e.strerror or e}"
        raise DataIOException(msg) from e
    if path.suffix != ".gz":
        return data
    try:
        return gzip.decompress(data)
    except (OSError, EOFError) as e:
        msg = f"{path}: corrupt gzip stream ({e})"
        raise DataIOException(msg, hint="Download the file again.") from e


def read_cifar(
    paths: Sequence[Path], label_bytes: int = 1
) -> tuple[NDArray[np.uint8], NDArray[np.int64]]:
    """Read CIFAR binary records; the last label byte of each record is used."""
    images: list[NDArray[np.uint8]] = []
    labels: list[NDArray[np.int64]] = []
    record = label_bytes + CIFAR_PIXELS
    for path in paths:
        raw = np.frombuffer(_read(path), dtype=np.uint8)
        if raw.size % record:
            msg = f"{path}: size {raw.size} is not a multiple of the {record}-byte record"
            raise DataIOException(msg)
        rows = raw.reshape(-1, record)
        labels.append(rows[:, label_bytes - 1].astype(np.int64))
        images.append(rows[:, label_bytes:].reshape(-1, *CIFAR_SHAPE))
    return np.concatenate(images), np.concatenate(labels)


def _idx_header(raw: bytes, path: Path, magic: int, dims: int) -> tuple[int, ...]:
    header = np.frombuffer(raw[: 4 * (dims + 1)], dtype=">u4")
    if header.size != dims + 1 or int(header[0]) != magic:
        msg = f"{path}: not an idx file with magic number {magic}"
        raise DataException(msg)
    return tuple(int(d) for d in header[1:])


def read_mnist(
    images_path: Path, labels_path: Path
) -> tuple[NDArray[np.uint8], NDArray[np.int64]]:
    """Read one MNIST idx3 image file and its idx1 label file."""
    raw_images = _read(images_path)
    count, rows, cols = _idx_header(raw_images, images_path, IDX_IMAGES_MAGIC, 3)
    pixels = np.frombuffer(raw_images[16:], dtype=np.uint8)
    raw_labels = _read(labels_path)
    (label_count,) = _idx_header(raw_labels, labels_path, IDX_LABELS_MAGIC, 1)
    labels = np.frombuffer(raw_labels[8:], dtype=np.uint8).astype(np.int64)
    if pixels.size != count * rows * cols or labels.size != label_count or count != label_count:
        msg = f"{images_path} and {labels_path} disagree on the sample count"
        raise DataException(msg)
    return pixels.reshape(count, 1, rows, cols), labels


def convert(
    fmt: RawFormat | str,
    train_inputs: Sequence[Path],
    test_inputs: Sequence[Path],
    output: Path,
) -> tuple[Dataset, Dataset]:
    """Convert raw dumps to ``output/train`` and ``output/test``.

    For MNIST each input list is ``[images, labels]``. Normalization statistics
    come from the training split and are shared with the test split.

    Raises:
        DataException: On malformed inputs.
        DataIOException: On missing, unreadable, truncated or corrupt-gzip inputs.
    """
    fmt = RawFormat(fmt)
    if fmt == RawFormat.MNIST:
        if len(train_inputs) != 2 or len(test_inputs) != 2:
            msg = "MNIST conversion takes an images file and a labels file per split"
            raise DataException(msg)
        train_x, train_y = read_mnist(train_inputs[0], train_inputs[1])
        test_x, test_y = read_mnist(test_inputs[0], test_inputs[1])
        num_classes = 10
    else:
        label_bytes = 2 if fmt == RawFormat.CIFAR100 else 1
        train_x, train_y = read_cifar(train_inputs, label_bytes)
        test_x, test_y = read_cifar(test_inputs, label_bytes)
        num_classes = 100 if fmt == RawFormat.CIFAR100 else 10

    mean, std = channel_stats(train_x)
    train = Dataset(train_x, train_y, num_classes, mean, std, Split.TRAIN)
    test = Dataset(test_x, test_y, num_classes, mean, std, Split.TEST)
    train.save(output / Split.TRAIN)
    test.save(output / Split.TEST)
    logger.info("Converted %s: %d train / %d test samples", fmt, len(train), len(test))
    return train, test
