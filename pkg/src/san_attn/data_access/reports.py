"""Readers and writers for JS matrices, policy files and run reports.

CSV numbers carry 6 decimals. JSON files are written whole through the atomic
writer.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Mapping, Sequence
from pathlib import Path
from typing import Any

import numpy as np
import pandera.errors
import polars as pl

from san_attn.data_access.files import atomic_write_text
from san_attn.domain.enums import AttentionKind
from san_attn.domain.errors import ConfigurationError, FormatError
from san_attn.domain.models import LN2, SharingPolicy
from san_attn.domain.schemas import BenchRecordSchema, js_matrix_schema
from san_attn.services.divergence import JsMatrix

logger = logging.getLogger(__name__)

CSV_DECIMALS = 6


def _dump_json(obj: Any, path: str | Path) -> Path:
    return atomic_write_text(path, json.dumps(obj, indent=2) + "\n")


def _load_json(path: str | Path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"cannot read JSON from {path}: {e}") from e


def _write_csv(frame: pl.DataFrame, path: str | Path, include_header: bool = True) -> Path:
    return atomic_write_text(path, frame.write_csv(include_header=include_header, float_precision=CSV_DECIMALS))


def _js_columns(layers: int) -> list[str]:
    return [f"l{j + 1}" for j in range(layers)]


def js_matrix_frame(js: JsMatrix) -> pl.DataFrame:
    return pl.DataFrame(dict(zip(_js_columns(js.layers), js.values.T, strict=True)))


def write_js_matrix_csv(js: JsMatrix, path: str | Path) -> Path:
    """M rows of M comma-separated values, 6 decimals, no header."""
    return _write_csv(js_matrix_frame(js), path, include_header=False)


def write_js_matrix_json(js: JsMatrix, path: str | Path) -> Path:
    return _dump_json({"layers": js.layers, "kind": js.kind.value, "values": js.values.tolist()}, path)


def read_js_matrix_csv(path: str | Path, kind: AttentionKind = AttentionKind.SELF) -> JsMatrix:
    """Parse and validate a headerless M x M JsMatrix CSV.

    Raises:
        FormatError: If the file is unreadable, not square, asymmetric, has a
            non-zero diagonal or holds values outside [0, ln 2].
    """
    try:
        frame = pl.read_csv(path, has_header=False)
    except (pl.exceptions.PolarsError, OSError) as e:
        raise FormatError(f"cannot read JS matrix CSV {path}: {e}") from e
    if frame.height != frame.width:
        raise FormatError(f"JS matrix CSV {path} is {frame.height} x {frame.width}, expected square")
    frame.columns = _js_columns(frame.width)
    try:
        frame = js_matrix_schema(frame.width).validate(frame, lazy=True)
    except (pandera.errors.SchemaErrors, pandera.errors.SchemaError) as e:
        raise FormatError(f"malformed JS matrix CSV {path}: {e}") from e
    return JsMatrix(kind=kind, values=np.minimum(frame.to_numpy().astype(np.float64), LN2))


def read_js_matrix_json(path: str | Path) -> JsMatrix:
    """Parse {"layers": M, "kind": ..., "values": [[...]]}.

    Raises:
        FormatError: If the document is malformed or violates JsMatrix invariants.
    """
    doc = _load_json(path)
    try:
        kind = AttentionKind(doc["kind"])
        values = np.asarray(doc["values"], dtype=np.float64)
        layers = int(doc["layers"])
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed JS matrix JSON {path}: {e}") from e
    if values.shape != (layers, layers):
        raise FormatError(f"JS matrix JSON {path} declares {layers} layers but holds shape {values.shape}")
    try:
        return JsMatrix(kind=kind, values=values)
    except ValueError as e:
        raise FormatError(f"invalid JS matrix in {path}: {e}") from e


def read_js_matrix(path: str | Path, kind: AttentionKind = AttentionKind.SELF) -> JsMatrix:
    """Dispatch on the file suffix (.json, otherwise CSV)."""
    return read_js_matrix_json(path) if Path(path).suffix.lower() == ".json" else read_js_matrix_csv(path, kind)


def write_policy(policy: SharingPolicy, path: str | Path, theta_self: float | None = None, theta_encdec: float | None = None) -> Path:
    """Policy JSON {"self", "encdec", "enc", "theta_self", "theta_encdec"}."""
    doc: dict[str, Any] = policy.to_dict()
    doc["theta_self"] = theta_self
    doc["theta_encdec"] = theta_encdec
    return _dump_json(doc, path)


def read_policy(path: str | Path) -> SharingPolicy:
    """Parse a policy file; the theta fields are informational.

    Raises:
        FormatError: If the document is malformed.
    """
    doc = _load_json(path)
    if not isinstance(doc, Mapping):
        raise FormatError(f"policy file {path} must hold a JSON object")
    try:
        return SharingPolicy.from_dict(doc)
    except (ConfigurationError, TypeError, ValueError) as e:
        raise FormatError(f"malformed policy file {path}: {e}") from e


def write_loss_curve(losses: Sequence[float], path: str | Path) -> Path:
    """CSV with columns step, loss."""
    return _write_csv(pl.DataFrame({"step": list(range(1, len(losses) + 1)), "loss": list(losses)}, schema={"step": pl.Int64, "loss": pl.Float64}), path)


def js_curve_frame(checkpoints: Sequence[tuple[int, Sequence[float]]], dec_layers: int) -> pl.DataFrame:
    """One row per checkpoint; columns step and js_<i>_<i+1> for each adjacent decoder pair."""
    columns: dict[str, list[Any]] = {"step": [step for step, _ in checkpoints]}
    for i in range(dec_layers - 1):
        columns[f"js_{i + 1}_{i + 2}"] = [float(values[i]) for _, values in checkpoints]
    schema = {"step": pl.Int64} | {name: pl.Float64 for name in columns if name != "step"}
    return pl.DataFrame(columns, schema=schema)


def write_js_curve(checkpoints: Sequence[tuple[int, Sequence[float]]], dec_layers: int, path: str | Path) -> Path:
    return _write_csv(js_curve_frame(checkpoints, dec_layers), path)


def write_json_report(doc: Mapping[str, Any], path: str | Path) -> Path:
    return _dump_json(dict(doc), path)


def write_bench_records_csv(records: Sequence[Mapping[str, Any]], path: str | Path) -> Path:
    """Validate per-variant bench records and write them as CSV."""
    frame = pl.DataFrame([dict(r) for r in records])
    BenchRecordSchema.validate(frame)
    return _write_csv(frame, path)
