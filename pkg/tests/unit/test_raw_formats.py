"""Unit tests for the CIFAR and MNIST converters."""

import gzip
from pathlib import Path

import numpy as np
import pytest

from dks_lab.core.dataset import Dataset, Split
from dks_lab.exceptions import DataException, DataIOException
from dks_lab.utils.raw_formats import (
    CIFAR_PIXELS,
    IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
    RawFormat,
    convert,
    read_cifar,
    read_mnist,
)


def _cifar_file(path: Path, labels: list[int], label_bytes: int = 1) -> Path:
    records = []
    for index, label in enumerate(labels):
        prefix = [0] * (label_bytes - 1) + [label]
        records.append(bytes(prefix) + bytes([index % 256]) * CIFAR_PIXELS)
    path.write_bytes(b"".join(records))
    return path


def _idx_files(tmp_path: Path, labels: list[int], *, compress: bool = False) -> tuple[Path, Path]:
    count = len(labels)
    images = np.array([IDX_IMAGES_MAGIC, count, 2, 2], dtype=">u4").tobytes()
    images += bytes(range(count * 4))
    label_blob = np.array([IDX_LABELS_MAGIC, count], dtype=">u4").tobytes() + bytes(labels)
    suffix = ".gz" if compress else ""
    images_path = tmp_path / f"images-idx3-ubyte{suffix}"
    labels_path = tmp_path / f"labels-idx1-ubyte{suffix}"
    images_path.write_bytes(gzip.compress(images) if compress else images)
    labels_path.write_bytes(gzip.compress(label_blob) if compress else label_blob)
    return images_path, labels_path


class TestCifar:
    """Test suite for CIFAR binary batches."""

    def test_read_records(self, tmp_path: Path) -> None:
        """Test labels and pixel payloads of several files."""
        first = _cifar_file(tmp_path / "a.bin", [3, 1])
        second = _cifar_file(tmp_path / "b.bin", [9])
        images, labels = read_cifar([first, second])
        assert images.shape == (3, 3, 32, 32)
        assert labels.tolist() == [3, 1, 9]
        assert images[1, 2, 31, 31] == 1

    def test_cifar100_uses_fine_label(self, tmp_path: Path) -> None:
        """Test the second label byte is kept."""
        path = tmp_path / "train.bin"
        path.write_bytes(bytes([7, 42]) + bytes(CIFAR_PIXELS))
        _, labels = read_cifar([path], label_bytes=2)
        assert labels.tolist() == [42]

    def test_truncated_record(self, tmp_path: Path) -> None:
        """Test a partial record is reported as corruption."""
        path = tmp_path / "bad.bin"
        path.write_bytes(bytes(CIFAR_PIXELS))
        with pytest.raises(DataIOException):
            read_cifar([path])

    def test_missing_file(self, tmp_path: Path) -> None:
        """Test an absent input is reported."""
        with pytest.raises(DataIOException):
            read_cifar([tmp_path / "absent.bin"])


class TestMnist:
    """Test suite for idx files."""

    @pytest.mark.parametrize("compress", [False, True])
    def test_read(self, tmp_path: Path, compress: bool) -> None:
        """Test plain and gzip-compressed idx files."""
        images, labels = read_mnist(*_idx_files(tmp_path, [5, 0, 9], compress=compress))
        assert images.shape == (3, 1, 2, 2)
        assert labels.tolist() == [5, 0, 9]
        assert images[2, 0, 1, 1] == 11

    def test_corrupt_gzip(self, tmp_path: Path) -> None:
        """Test a damaged compressed file is an I/O error, not a traceback."""
        images, labels = _idx_files(tmp_path, [5, 0], compress=True)
        images.write_bytes(images.read_bytes()[:-6])
        with pytest.raises(DataIOException) as info:
            read_mnist(images, labels)
        assert info.value.exit_code == 4
        assert str(images) in info.value.message

    def test_bad_magic(self, tmp_path: Path) -> None:
        """Test swapped files are rejected."""
        images, labels = _idx_files(tmp_path, [1])
        with pytest.raises(DataException):
            read_mnist(labels, images)


class TestConvert:
    """Test suite for end-to-end conversion."""

    def test_cifar10(self, tmp_path: Path) -> None:
        """Test both splits are written with shared training statistics."""
        train = _cifar_file(tmp_path / "data_batch_1.bin", [0, 1, 2, 3])
        test = _cifar_file(tmp_path / "test_batch.bin", [4, 5])
        out = tmp_path / "cifar"
        _, converted_test = convert(RawFormat.CIFAR10, [train], [test], out)
        reloaded = Dataset.load(out / Split.TEST)
        assert len(reloaded) == 2
        assert reloaded.num_classes == 10
        np.testing.assert_allclose(reloaded.mean, converted_test.mean)

    def test_mnist_needs_pairs(self, tmp_path: Path) -> None:
        """Test MNIST takes exactly an images and a labels file per split."""
        images, _ = _idx_files(tmp_path, [1])
        with pytest.raises(DataException):
            convert("mnist", [images], [images], tmp_path / "out")
