"""JSON Lines token corpora: one {"src": [ids], "tgt": [ids]} object per sentence."""

from __future__ import annotations

import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import pandera.errors
import polars as pl

from san_attn.data_access.files import atomic_write_text
from san_attn.domain.errors import FormatError, InputError
from san_attn.domain.schemas import corpus_token_schema

logger = logging.getLogger(__name__)

CorpusRecord = tuple[list[int], list[int] | None]


@dataclass
class CorpusResult:
    """Result of reading and validating a corpus.

    Attributes:
        is_valid: True if every record passed validation.
        records: (src, tgt) pairs; tgt is None where the record has none.
        error_message: Error description naming the offending record.
    """

    is_valid: bool
    records: list[CorpusRecord] = field(default_factory=list)
    error_message: str | None = None

    def require(self) -> list[CorpusRecord]:
        """Records, or InputError if validation failed."""
        if not self.is_valid:
            raise InputError(self.error_message or "corpus failed validation")
        return self.records


def _explode(frame: pl.DataFrame) -> pl.DataFrame:
    """Long (record, side, position, token) frame; an empty sentence yields one null token."""
    sides = []
    for side in ("src", "tgt"):
        if side not in frame.columns:
            continue
        part = frame.select("record", pl.col(side).alias("token")).filter(pl.col("token").is_not_null())
        sides.append(
            part.explode("token")
            .with_columns(pl.lit(side).alias("side"), pl.int_range(pl.len()).over("record").alias("position"))
            .select("record", "side", "position", "token")
        )
    return pl.concat(sides, how="vertical_relaxed")


def _offending_tokens(tokens: pl.DataFrame, vocab: int) -> pl.DataFrame:
    """Rows whose token is missing, non-integral or outside [0, vocab)."""
    token, dtype = pl.col("token"), tokens["token"].dtype
    if dtype.is_integer():
        invalid = token.is_null() | (token < 0) | (token >= vocab)
    elif dtype.is_float():
        invalid = token.is_null() | token.is_nan() | (token != token.floor()) | (token < 0) | (token >= vocab)
    else:
        invalid = pl.lit(True)
    return tokens.filter(invalid)


def _first_offense(tokens: pl.DataFrame, vocab: int) -> list[str]:
    bad = _offending_tokens(tokens, vocab)
    if not len(bad):
        return []
    first = bad.row(0, named=True)
    return [f"first offending record {first['record']} ({first['side']} position {first['position']}, token {first['token']})"]


def _format_error_message(schema_errors: pandera.errors.SchemaErrors, tokens: pl.DataFrame, vocab: int) -> str:
    errors = _first_offense(tokens, vocab)
    failure_cases = schema_errors.failure_cases
    if failure_cases is not None:
        for row in failure_cases.head(5).iter_rows(named=True):
            errors.append(f"column '{row.get('column')}': {row.get('check')} (value: {row.get('failure_case')})")
        if len(failure_cases) > 5:
            errors.append(f"... and {len(failure_cases) - 5} more errors")
    return "; ".join(errors) or "corpus validation failed with unknown error"


def read_corpus(path: str | Path, vocab: int) -> CorpusResult:
    """Read a JSONL corpus with polars and validate token ids with pandera.

    Args:
        path: JSONL file.
        vocab: Vocabulary size bounding every id.

    Raises:
        FormatError: If the file is not JSONL of the documented shape.
    """
    try:
        frame = pl.read_ndjson(path)
    except (pl.exceptions.PolarsError, OSError) as e:
        raise FormatError(f"cannot read corpus {path}: {e}") from e
    if "src" not in frame.columns:
        raise FormatError(f"corpus {path} has no 'src' field")
    if frame["src"].null_count():
        raise FormatError(f"corpus record {frame['src'].is_null().arg_max()} has no 'src' field")
    for side in ("src", "tgt"):
        if side in frame.columns and not isinstance(frame.schema[side], pl.List):
            raise FormatError(f"corpus field '{side}' must be a list of ids, got {frame.schema[side]}")

    frame = frame.with_row_index("record")
    tokens = _explode(frame)
    logger.info(f"Validating {len(frame)} corpus records ({len(tokens)} tokens) from {path}")
    try:
        corpus_token_schema(vocab).validate(tokens, lazy=True)
    except pandera.errors.SchemaErrors as e:
        error_msg = _format_error_message(e, tokens, vocab)
        logger.error(f"corpus validation failed: {error_msg}")
        return CorpusResult(is_valid=False, error_message=error_msg)
    except pandera.errors.SchemaError as e:
        return CorpusResult(is_valid=False, error_message="; ".join([*_first_offense(tokens, vocab), str(e)]))

    has_tgt = "tgt" in frame.columns
    records: list[CorpusRecord] = [
        (list(row["src"]), list(row["tgt"]) if has_tgt and row["tgt"] is not None else None) for row in frame.iter_rows(named=True)
    ]
    return CorpusResult(is_valid=True, records=records)


def write_corpus(records: Sequence[tuple[Sequence[int], Sequence[int] | None]], path: str | Path) -> Path:
    """Write records as JSONL; a None target is omitted."""
    lines = []
    for src, tgt in records:
        obj: dict[str, list[int]] = {"src": [int(t) for t in src]}
        if tgt is not None:
            obj["tgt"] = [int(t) for t in tgt]
        lines.append(json.dumps(obj))
    return atomic_write_text(path, "".join(f"{line}\n" for line in lines))


def write_decodes(pairs: Sequence[tuple[Sequence[int], Sequence[int]]], path: str | Path) -> Path:
    """Write decode results as JSONL {"src": [...], "hyp": [...]}."""
    text = "".join(json.dumps({"src": [int(t) for t in src], "hyp": [int(t) for t in hyp]}) + "\n" for src, hyp in pairs)
    return atomic_write_text(path, text)
