"""Checkpoint I/O: a JSON manifest plus one flat little-endian float32 blob.

A checkpoint is a directory holding ``manifest.json`` and ``params.bin``. The
manifest lists every trainable tensor and every BN running statistic in
enumeration order with its shape, role tag and byte offset into the blob, and
embeds the :class:`~dks_lab.models.specs.ModelSpec` needed to rebuild the model.
Files are written with sorted keys and a fixed layout, so saving the same model
twice yields identical bytes.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from dks_lab.exceptions import CheckpointException
from dks_lab.models.multihead import BN_STAT_ROLE, MultiHeadModel, strip_aux
from dks_lab.models.specs import ModelSpec

logger = logging.getLogger(__name__)

FORMAT_NAME = "dks-checkpoint"
FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
BLOB_NAME = "params.bin"
BLOB_DTYPE = "<f4"
_ITEM_BYTES = np.dtype(BLOB_DTYPE).itemsize


class ParameterRecord(BaseModel):
    """One tensor stored in the blob."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    shape: tuple[int, ...]
    role: str
    byte_offset: int


class Manifest(BaseModel):
    """Checkpoint manifest.

    Attributes:
        format: Always ``dks-checkpoint``.
        version: Format version, currently 1.
        model_spec: Spec the tensors belong to.
        dtype: Blob element type (little-endian float32).
        blob: Blob file name relative to the checkpoint directory.
        blob_bytes: Expected blob size.
        parameters: Tensor records in enumeration order.
        metadata: Free-form provenance (epoch, run config, ...).
    """

    model_config = ConfigDict(extra="forbid")

    format: str = FORMAT_NAME
    version: int = FORMAT_VERSION
    model_spec: ModelSpec
    dtype: str = BLOB_DTYPE
    blob: str = BLOB_NAME
    blob_bytes: int
    parameters: list[ParameterRecord]
    metadata: dict[str, Any] = {}


def _named_arrays(model: MultiHeadModel) -> list[tuple[str, str, np.ndarray]]:
    arrays = [(name, role, tensor.data) for name, role, tensor in model.tagged_parameters()]
    for name, state in model.named_states():
        arrays.append((f"{name}.running_mean", BN_STAT_ROLE, state.running_mean))
        arrays.append((f"{name}.running_var", BN_STAT_ROLE, state.running_var))
    return arrays


def save_checkpoint(
    model: MultiHeadModel, path: Path, metadata: dict[str, Any] | None = None
) -> Path:
    """Write ``model`` to the checkpoint directory ``path``.

    Args:
        model: Model to serialize.
        path: Target directory, created if missing.
        metadata: JSON-serializable provenance stored in the manifest.

    Returns:
        The checkpoint directory.
    """
    records: list[ParameterRecord] = []
    chunks: list[bytes] = []
    offset = 0
    for name, role, array in _named_arrays(model):
        records.append(
            ParameterRecord(name=name, shape=array.shape, role=role, byte_offset=offset)
        )
        chunk = np.ascontiguousarray(array, dtype=BLOB_DTYPE).tobytes()
        chunks.append(chunk)
        offset += len(chunk)

    manifest = Manifest(
        model_spec=model.spec,
        blob_bytes=offset,
        parameters=records,
        metadata=metadata or {},
    )
    path.mkdir(parents=True, exist_ok=True)
    (path / BLOB_NAME).write_bytes(b"".join(chunks))
    text = json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True)
    (path / MANIFEST_NAME).write_text(text + "\n", encoding="utf-8")
    logger.info("Saved checkpoint %s (%d tensors, %d bytes)", path, len(records), offset)
    return path


def read_manifest(path: Path) -> Manifest:
    """Parse and validate the manifest of the checkpoint at ``path``.

    Raises:
        CheckpointException: If the manifest is missing, unreadable or invalid.
    """
    manifest_path = path / MANIFEST_NAME
    try:
        raw = json.loads(manifest_path.read_text(encoding="utf-8"))
        manifest = Manifest.model_validate(raw)
    except FileNotFoundError:
        msg = f"Checkpoint manifest not found: {manifest_path}"
        raise CheckpointException(msg) from None
    except (json.JSONDecodeError, UnicodeDecodeError, ValidationError) as e:
        msg = f"Corrupt checkpoint manifest {manifest_path}: {e}"
        raise CheckpointException(msg) from e
    if manifest.format != FORMAT_NAME or manifest.version != FORMAT_VERSION:
        msg = f"Unsupported checkpoint format {manifest.format} v{manifest.version}"
        raise CheckpointException(msg)
    if manifest.dtype != BLOB_DTYPE:
        msg = f"Unsupported checkpoint blob dtype {manifest.dtype}"
        raise CheckpointException(msg)
    return manifest


def load_checkpoint(path: Path) -> tuple[MultiHeadModel, Manifest]:
    """Rebuild the model stored at ``path``.

    Returns:
        The model (in eval mode) and its manifest.

    Raises:
        CheckpointException: On a missing or corrupt manifest or blob, or when a
            record does not match the tensors of the rebuilt model.
    """
    manifest = read_manifest(path)
    blob_path = path / manifest.blob
    try:
        blob = np.frombuffer(blob_path.read_bytes(), dtype=BLOB_DTYPE)
    except FileNotFoundError:
        msg = f"Checkpoint blob not found: {blob_path}"
        raise CheckpointException(msg) from None
    if blob.nbytes != manifest.blob_bytes:
        msg = (
            f"Checkpoint blob {blob_path} has {blob.nbytes} bytes, "
            f"manifest says {manifest.blob_bytes}"
        )
        raise CheckpointException(msg)

    model = MultiHeadModel(manifest.model_spec)
    params = dict(model.named_parameters())
    states = dict(model.named_states())
    expected = len(params) + 2 * len(states)
    if len(manifest.parameters) != expected:
        msg = f"Checkpoint lists {len(manifest.parameters)} tensors, the model has {expected}"
        raise CheckpointException(msg)

    for record in manifest.parameters:
        count = int(np.prod(record.shape))
        start = record.byte_offset // _ITEM_BYTES
        if record.byte_offset % _ITEM_BYTES or start + count > blob.size:
            msg = f"Checkpoint record {record.name} points outside the blob"
            raise CheckpointException(msg)
        values = blob[start : start + count].reshape(record.shape)
        _assign(record, values, params, states)

    model.eval()
    logger.info("Loaded checkpoint %s with heads %s", path, model.head_ids)
    return model, manifest


def _assign(
    record: ParameterRecord,
    values: np.ndarray,
    params: dict[str, Any],
    states: dict[str, Any],
) -> None:
    if record.role == BN_STAT_ROLE:
        state_name, _, field = record.name.rpartition(".")
        state = states.get(state_name)
        if state is None or field not in ("running_mean", "running_var"):
            msg = f"Checkpoint record {record.name} does not match any BN layer"
            raise CheckpointException(msg)
        current = getattr(state, field)
        if current.shape != values.shape:
            msg = (
                f"Checkpoint record {record.name} has shape {values.shape}, "
                f"expected {current.shape}"
            )
            raise CheckpointException(msg)
        setattr(state, field, values.astype(current.dtype))
        return

    tensor = params.get(record.name)
    if tensor is None:
        msg = f"Checkpoint record {record.name} does not match any model parameter"
        raise CheckpointException(msg)
    if tensor.shape != values.shape:
        msg = (
            f"Checkpoint record {record.name} has shape {values.shape}, expected {tensor.shape}"
        )
        raise CheckpointException(msg)
    tensor.data = values.astype(tensor.dtype)


def export_stripped(source: Path, target: Path) -> tuple[int, int]:
    """Write a backbone-only copy of the checkpoint at ``source`` to ``target``.

    Exporting an already stripped checkpoint reproduces it byte for byte.

    Returns:
        Trainable parameter counts before and after stripping.
    """
    model, manifest = load_checkpoint(source)
    stripped = strip_aux(model)
    metadata = {**manifest.metadata, "stripped": True}
    save_checkpoint(stripped, target, metadata=metadata)
    return model.num_parameters(), stripped.num_parameters()
