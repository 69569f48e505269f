"""Unit tests for datasets, batching and label corruption."""

from pathlib import Path

import numpy as np
import pytest

from dks_lab.core.dataset import (
    IMAGES_NAME,
    LABELS_NAME,
    META_NAME,
    Dataset,
    Split,
    augment_batch,
    corrupt_labels,
    generate_synthetic,
    iterate_batches,
    load_split_pair,
)
from dks_lab.core.tensor import precision
from dks_lab.exceptions import ConfigurationException, DataException, DataIOException


@pytest.fixture
def splits() -> tuple[Dataset, Dataset]:
    """Small synthetic train and test splits."""
    return generate_synthetic(4, 10, image_size=8, seed=3, test_per_class=2)


class TestDataset:
    """Test suite for the dataset container."""

    def test_label_out_of_range(self) -> None:
        """Test labels must lie in [0, K)."""
        with pytest.raises(DataException) as info:
            Dataset(np.zeros((2, 1, 2, 2)), np.array([0, 5]), 3, [0.5], [0.2])
        assert "sample 1" in info.value.message

    def test_count_mismatch(self) -> None:
        """Test image and label counts must agree."""
        with pytest.raises(DataException):
            Dataset(np.zeros((2, 1, 2, 2)), np.array([0]), 3, [0.5], [0.2])

    def test_stats_shape(self) -> None:
        """Test one mean and std per channel."""
        with pytest.raises(DataException):
            Dataset(np.zeros((1, 3, 2, 2)), np.array([0]), 3, [0.5], [0.2])

    def test_normalized(self) -> None:
        """Test (x / 255 - mean) / std in the active precision."""
        data = Dataset(np.full((1, 1, 1, 1), 255), np.array([0]), 2, [0.5], [0.25])
        assert data.normalized()[0, 0, 0, 0] == pytest.approx(2.0)
        with precision(64):
            assert data.normalized().dtype == np.float64

    def test_save_load_preserves_contents(self, tmp_path: Path, splits) -> None:
        """Test the on-disk layout and a faithful reload."""
        train, _ = splits
        train.save(tmp_path / "train")
        assert {p.name for p in (tmp_path / "train").iterdir()} == {
            META_NAME,
            IMAGES_NAME,
            LABELS_NAME,
        }
        loaded = Dataset.load(tmp_path / "train")
        np.testing.assert_array_equal(loaded.images, train.images)
        np.testing.assert_array_equal(loaded.labels, train.labels)
        np.testing.assert_allclose(loaded.mean, train.mean)
        assert loaded.split == Split.TRAIN
        assert loaded.num_classes == 4

    def test_load_missing_file(self, tmp_path: Path, splits) -> None:
        """Test an incomplete directory names the missing file."""
        splits[0].save(tmp_path)
        (tmp_path / LABELS_NAME).unlink()
        with pytest.raises(DataIOException) as info:
            Dataset.load(tmp_path)
        assert LABELS_NAME in info.value.message

    def test_load_truncated_images(self, tmp_path: Path, splits) -> None:
        """Test a size disagreement with the metadata."""
        splits[0].save(tmp_path)
        blob = tmp_path / IMAGES_NAME
        blob.write_bytes(blob.read_bytes()[:-1])
        with pytest.raises(DataIOException):
            Dataset.load(tmp_path)

    def test_load_malformed_meta(self, tmp_path: Path, splits) -> None:
        """Test invalid metadata is a data error."""
        splits[0].save(tmp_path)
        (tmp_path / META_NAME).write_text('{"K": 4}', encoding="utf-8")
        with pytest.raises(DataException):
            Dataset.load(tmp_path)

    def test_load_split_pair(self, tmp_path: Path, splits) -> None:
        """Test the root/train and root/test convention."""
        train, test = splits
        train.save(tmp_path / "train")
        test.save(tmp_path / "test")
        loaded_train, loaded_test = load_split_pair(tmp_path)
        assert (len(loaded_train), len(loaded_test)) == (40, 8)


class TestSynthetic:
    """Test suite for the synthetic generator."""

    def test_balanced_and_deterministic(self) -> None:
        """Test class balance and seed reproducibility."""
        train, test = generate_synthetic(3, 5, image_size=6, seed=9)
        again, _ = generate_synthetic(3, 5, image_size=6, seed=9)
        assert np.bincount(train.labels).tolist() == [5, 5, 5]
        assert len(test) == 3
        np.testing.assert_array_equal(train.images, again.images)
        np.testing.assert_array_equal(test.mean, train.mean)

    def test_needs_two_classes(self) -> None:
        """Test a single class is refused."""
        with pytest.raises(ConfigurationException):
            generate_synthetic(1, 5)


class TestBatching:
    """Test suite for batch iteration and augmentation."""

    def test_sequential_order_keeps_last_batch(self, splits) -> None:
        """Test dataset order and a short final batch."""
        train, _ = splits
        sizes = [len(labels) for _, labels in iterate_batches(train, 16)]
        assert sizes == [16, 16, 8]
        first_labels = next(iterate_batches(train, 16))[1]
        np.testing.assert_array_equal(first_labels, train.labels[:16])

    def test_seeded_shuffle(self, splits) -> None:
        """Test equal seeds give equal permutations."""
        train, _ = splits
        a = [labels for _, labels in iterate_batches(train, 8, np.random.default_rng(1))]
        b = [labels for _, labels in iterate_batches(train, 8, np.random.default_rng(1))]
        np.testing.assert_array_equal(np.concatenate(a), np.concatenate(b))
        assert sorted(np.concatenate(a)) == sorted(train.labels)

    def test_augment_needs_generator(self, splits) -> None:
        """Test augmentation without a generator is refused."""
        with pytest.raises(ConfigurationException):
            next(iterate_batches(splits[0], 8, augment=True))

    def test_augment_preserves_shape(self, rng) -> None:
        """Test crops and flips keep the batch shape."""
        x = rng.normal(size=(5, 3, 8, 8))
        assert augment_batch(x, rng).shape == x.shape

    def test_zero_padding_crop_of_constant(self, rng) -> None:
        """Test padding is zero, the mean pixel in normalized space."""
        out = augment_batch(np.ones((20, 1, 4, 4)), rng, padding=4)
        assert set(np.unique(out)) <= {0.0, 1.0}


class TestCorruptLabels:
    """Test suite for label noise."""

    @pytest.mark.parametrize("ratio", [0.1, 0.25, 0.3, 1.0])
    def test_exact_count_all_changed(self, splits, ratio: float) -> None:
        """Test round(ratio * N) labels change, each to a different class."""
        train, _ = splits
        noisy = corrupt_labels(train, ratio, seed=5)
        changed = np.flatnonzero(noisy.labels != train.labels)
        assert changed.size == int(np.floor(ratio * len(train) + 0.5))
        assert noisy.labels.min() >= 0
        assert noisy.labels.max() < train.num_classes

    def test_reproducible(self, splits) -> None:
        """Test the same seed corrupts the same labels."""
        train, _ = splits
        first = corrupt_labels(train, 0.3, seed=2)
        second = corrupt_labels(train, 0.3, seed=2)
        np.testing.assert_array_equal(first.labels, second.labels)

    def test_zero_ratio_is_identity(self, splits) -> None:
        """Test ratio 0 returns the dataset unchanged."""
        assert corrupt_labels(splits[0], 0.0, seed=0) is splits[0]

    def test_ratio_out_of_range(self, splits) -> None:
        """Test ratios outside [0, 1] are refused."""
        with pytest.raises(ConfigurationException):
            corrupt_labels(splits[0], 1.5, seed=0)
