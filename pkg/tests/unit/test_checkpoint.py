"""Unit tests for checkpoint save, load and export."""

import json
from pathlib import Path

import numpy as np
import pytest

from dks_lab.core.ops import Mode
from dks_lab.core.tensor import Tensor
from dks_lab.exceptions import CheckpointException
from dks_lab.models.checkpoint import (
    BLOB_NAME,
    MANIFEST_NAME,
    export_stripped,
    load_checkpoint,
    read_manifest,
    save_checkpoint,
)
from dks_lab.models.multihead import BN_STAT_ROLE, MultiHeadModel, build
from dks_lab.models.presets import PresetOptions, resolve_preset


@pytest.fixture
def model(rng) -> MultiHeadModel:
    """A narrow cifar-mini model whose BN statistics moved away from the defaults."""
    spec = resolve_preset("cifar-mini").make_spec(
        PresetOptions(num_classes=3, input_shape=(3, 8, 8), width_multiplier=0.5, seed=4)
    )
    built = build(spec)
    built.forward_all(Tensor(rng.normal(size=(4, 3, 8, 8))), Mode.TRAIN)
    return built


@pytest.fixture
def batch(rng) -> Tensor:
    """Inputs for forward comparisons."""
    return Tensor(rng.normal(size=(5, 3, 8, 8)))


class TestSaveLoad:
    """Test suite for the manifest and blob format."""

    def test_round_trip_forward_is_exact(self, tmp_path: Path, model, batch) -> None:
        """Test every head of the reloaded model reproduces the original."""
        save_checkpoint(model, tmp_path / "ckpt", {"epoch": 3})
        loaded, manifest = load_checkpoint(tmp_path / "ckpt")
        model.eval()
        assert loaded.mode == Mode.EVAL
        assert manifest.metadata == {"epoch": 3}
        for a, b in zip(model.forward_all(batch), loaded.forward_all(batch), strict=True):
            np.testing.assert_array_equal(a.data, b.data)

    def test_manifest_lists_roles_and_offsets(self, tmp_path: Path, model) -> None:
        """Test records are contiguous and carry provenance tags."""
        save_checkpoint(model, tmp_path)
        manifest = read_manifest(tmp_path)
        roles = {record.role for record in manifest.parameters}
        assert {"backbone", "aux:C2", "aux:C3", BN_STAT_ROLE} == roles
        offset = 0
        for record in manifest.parameters:
            assert record.byte_offset == offset
            offset += 4 * int(np.prod(record.shape))
        assert offset == manifest.blob_bytes == (tmp_path / BLOB_NAME).stat().st_size

    def test_saving_twice_is_byte_identical(self, tmp_path: Path, model) -> None:
        """Test the layout is deterministic."""
        save_checkpoint(model, tmp_path / "a", {"epoch": 1})
        save_checkpoint(model, tmp_path / "b", {"epoch": 1})
        for name in (MANIFEST_NAME, BLOB_NAME):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestCorruption:
    """Test suite for damaged checkpoints."""

    def test_missing_manifest(self, tmp_path: Path) -> None:
        """Test an empty directory."""
        with pytest.raises(CheckpointException):
            load_checkpoint(tmp_path)

    def test_invalid_manifest_json(self, tmp_path: Path, model) -> None:
        """Test a manifest that is not JSON."""
        save_checkpoint(model, tmp_path)
        (tmp_path / MANIFEST_NAME).write_text("{", encoding="utf-8")
        with pytest.raises(CheckpointException):
            load_checkpoint(tmp_path)

    def test_unknown_format(self, tmp_path: Path, model) -> None:
        """Test a foreign format tag."""
        save_checkpoint(model, tmp_path)
        raw = json.loads((tmp_path / MANIFEST_NAME).read_text(encoding="utf-8"))
        raw["format"] = "other"
        (tmp_path / MANIFEST_NAME).write_text(json.dumps(raw), encoding="utf-8")
        with pytest.raises(CheckpointException):
            read_manifest(tmp_path)

    def test_truncated_blob(self, tmp_path: Path, model) -> None:
        """Test a blob shorter than the manifest says."""
        save_checkpoint(model, tmp_path)
        blob = tmp_path / BLOB_NAME
        blob.write_bytes(blob.read_bytes()[:-4])
        with pytest.raises(CheckpointException):
            load_checkpoint(tmp_path)

    def test_missing_blob(self, tmp_path: Path, model) -> None:
        """Test a manifest without its blob."""
        save_checkpoint(model, tmp_path)
        (tmp_path / BLOB_NAME).unlink()
        with pytest.raises(CheckpointException):
            load_checkpoint(tmp_path)

    def test_record_shape_mismatch(self, tmp_path: Path, model) -> None:
        """Test a record whose shape disagrees with the rebuilt model."""
        save_checkpoint(model, tmp_path)
        raw = json.loads((tmp_path / MANIFEST_NAME).read_text(encoding="utf-8"))
        raw["parameters"][0]["shape"] = [1]
        (tmp_path / MANIFEST_NAME).write_text(json.dumps(raw), encoding="utf-8")
        with pytest.raises(CheckpointException):
            load_checkpoint(tmp_path)


class TestExport:
    """Test suite for stripping auxiliary heads."""

    def test_stripped_matches_c1(self, tmp_path: Path, model, batch) -> None:
        """Test the exported model equals C1 exactly and is smaller."""
        save_checkpoint(model, tmp_path / "full")
        before, after = export_stripped(tmp_path / "full", tmp_path / "stripped")
        assert after < before

        stripped, manifest = load_checkpoint(tmp_path / "stripped")
        assert stripped.head_ids == ["C1"]
        assert manifest.metadata["stripped"] is True
        model.eval()
        np.testing.assert_array_equal(stripped(batch).data, model.forward_all(batch)[0].data)
        aux = sum(t.size for _, role, t in model.tagged_parameters() if role.startswith("aux:"))
        assert before - after == aux

    def test_export_is_idempotent(self, tmp_path: Path, model) -> None:
        """Test exporting a stripped checkpoint reproduces its bytes."""
        save_checkpoint(model, tmp_path / "full")
        export_stripped(tmp_path / "full", tmp_path / "once")
        before, after = export_stripped(tmp_path / "once", tmp_path / "twice")
        assert before == after
        for name in (MANIFEST_NAME, BLOB_NAME):
            assert (tmp_path / "once" / name).read_bytes() == (
                tmp_path / "twice" / name
            ).read_bytes()
