"""Single-file weight container.

Layout: 8-byte magic ``SANW0001``, a little-endian u64 manifest length, a UTF-8
JSON manifest (config, policy, ordered tensor records), then one blob of
little-endian float32 values in manifest order, row-major.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from pathlib import Path
from typing import Any

import numpy as np

from san_attn.data_access.files import atomic_write_bytes
from san_attn.domain.errors import ConfigurationError, FormatError
from san_attn.domain.models import ModelConfig, ModelParams, SharingPolicy
from san_attn.services.model import tensor_layout

logger = logging.getLogger(__name__)

MAGIC = b"SANW0001"
_HEADER = struct.Struct("<8sQ")
_F32 = np.dtype("<f4")


def encode_weights(params: ModelParams) -> bytes:
    """Serialize params into container bytes."""
    records: list[dict[str, Any]] = []
    chunks: list[bytes] = []
    offset = 0
    for name, shape in tensor_layout(params.config, params.policy):
        data = np.ascontiguousarray(params[name], dtype=_F32).tobytes()
        records.append({"name": name, "shape": list(shape), "offset": offset})
        chunks.append(data)
        offset += len(data)
    manifest = json.dumps(
        {"config": params.config.to_dict(), "policy": params.policy.to_dict(), "tensors": records},
        separators=(",", ":"),
    ).encode("utf-8")
    return _HEADER.pack(MAGIC, len(manifest)) + manifest + b"".join(chunks)


def save_weights(params: ModelParams, path: str | Path) -> Path:
    """Write params atomically to path."""
    data = encode_weights(params)
    target = atomic_write_bytes(path, data)
    logger.info(f"Saved {params.count()} parameters ({params.policy.describe()}) to {target}")
    return target


def _parse_manifest(raw: bytes) -> tuple[ModelConfig, SharingPolicy, list[dict[str, Any]]]:
    try:
        manifest = json.loads(raw.decode("utf-8"))
        config = ModelConfig.from_dict(manifest["config"])
        policy = SharingPolicy.from_dict(manifest["policy"])
        records = list(manifest["tensors"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise FormatError(f"unreadable weight manifest: {e}") from e
    except ConfigurationError as e:
        raise FormatError(f"weight manifest holds an invalid config or policy: {e}") from e
    if not all(isinstance(r, dict) for r in records):
        raise FormatError("tensor records must be JSON objects")
    return config, policy, records


def decode_weights(data: bytes, expected_policy: SharingPolicy | None = None) -> ModelParams:
    """Parse container bytes.

    Raises:
        FormatError: On a bad magic, a manifest/blob length mismatch, or tensor
            records that do not match the layout of the stored (or expected) policy.
    """
    if len(data) < _HEADER.size:
        raise FormatError(f"weight file too short for a header ({len(data)} bytes)")
    magic, manifest_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if _HEADER.size + manifest_len > len(data):
        raise FormatError(f"manifest length {manifest_len} runs past the end of the file")
    config, policy, records = _parse_manifest(data[_HEADER.size : _HEADER.size + manifest_len])
    if expected_policy is not None and expected_policy != policy:
        raise FormatError(f"weights were laid out for {policy.describe()}, not {expected_policy.describe()}")

    try:
        layout = tensor_layout(config, policy)
    except ConfigurationError as e:
        raise FormatError(f"stored policy does not fit the stored config: {e}") from e
    found = [(r.get("name"), tuple(r.get("shape", ()))) for r in records]
    if found != layout:
        missing = sorted({n for n, _ in layout} - {n for n, _ in found})
        extra = sorted({n for n, _ in found} - {n for n, _ in layout})
        raise FormatError(f"tensor records do not match the policy layout (missing={missing[:5]}, unexpected={extra[:5]}, or shapes/order differ)")

    blob = memoryview(data)[_HEADER.size + manifest_len :]
    expected_bytes = sum(math.prod(shape) for _, shape in layout) * _F32.itemsize
    if len(blob) != expected_bytes:
        raise FormatError(f"blob holds {len(blob)} bytes but the manifest describes {expected_bytes}")

    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for record, (name, shape) in zip(records, layout, strict=True):
        if record.get("offset") != offset:
            raise FormatError(f"tensor {name} offset {record.get('offset')} should be {offset}")
        count = math.prod(shape)
        tensors[name] = np.frombuffer(blob, dtype=_F32, count=count, offset=offset).astype(np.float64).reshape(shape)
        offset += count * _F32.itemsize
    return ModelParams(config, policy, tensors)


def load_weights(path: str | Path, expected_policy: SharingPolicy | None = None) -> ModelParams:
    """Read a weight container from path; values widen to float64."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read weight file {path}: {e}") from e
    params = decode_weights(data, expected_policy)
    logger.info(f"Loaded {params.count()} parameters ({params.policy.describe()}) from {path}")
    return params
