"""Pandera validation schemas for corpora, JS matrices and benchmark records."""

import pandera.polars as pa
import polars as pl
from pandera.polars import PolarsData

from san_attn.domain.models import LN2

# CSV values carry 6 decimals, so ln 2 may appear rounded up
JS_CSV_TOLERANCE = 1e-6


def corpus_token_schema(vocab: int) -> pa.DataFrameSchema:
    """Schema for the exploded token frame (record, side, position, token).

    A null token marks an empty sentence.
    """
    return pa.DataFrameSchema(
        {
            "record": pa.Column(pl.UInt32, pa.Check.ge(0)),
            "side": pa.Column(pl.Utf8, pa.Check.isin(["src", "tgt"])),
            "position": pa.Column(pl.Int64, pa.Check.ge(0)),
            "token": pa.Column(pl.Int64, [pa.Check.ge(0), pa.Check.lt(vocab)], nullable=False),
        },
        strict=True,
        coerce=False,
    )


def _square_symmetric(data: PolarsData) -> pl.LazyFrame:
    frame = data.lazyframe.collect()
    values = frame.to_numpy()
    ok = values.shape[0] == values.shape[1] and bool((values == values.T).all()) and bool((values.diagonal() == 0).all())
    return pl.LazyFrame({"symmetric": [ok]})


def js_matrix_schema(layers: int) -> pa.DataFrameSchema:
    """Schema for an M x M JsMatrix CSV: Float64 cells in [0, ln 2], symmetric, zero diagonal."""
    cell = pa.Column(pl.Float64, pa.Check.in_range(0.0, LN2 + JS_CSV_TOLERANCE), nullable=False)
    return pa.DataFrameSchema(
        {f"l{i}": cell for i in range(1, layers + 1)},
        checks=[pa.Check(_square_symmetric, error="matrix must be square and symmetric with a zero diagonal")],
        strict=True,
        coerce=True,
    )


class BenchRecordSchema(pa.DataFrameModel):
    """Pandera schema for per-variant benchmark records.

    Validates:
        - Positive workload and timing fields
        - tokens_per_sec = tokens / wall_seconds
        - 64-hex-digit output checksum
    """

    policy_id: str = pa.Field(str_length={"min_value": 1})
    beam: int = pa.Field(ge=1)
    batch: int = pa.Field(ge=1)
    workers: int = pa.Field(ge=1)
    tokens: int = pa.Field(ge=1)
    wall_seconds: float = pa.Field(gt=0)
    tokens_per_sec: float = pa.Field(gt=0)
    flops_per_token: float = pa.Field(gt=0)
    checksum: str = pa.Field(str_matches=r"^[0-9a-f]{64}$")

    class Config:  # type: ignore[override]
        """Pandera configuration."""

        strict = False
        coerce = True

    @pa.dataframe_check  # type: ignore[misc]
    @classmethod
    def rate_matches_wall_time(cls, data: PolarsData) -> pl.LazyFrame:
        """Check that tokens_per_sec is tokens / wall_seconds.

        Args:
            data: PolarsData containing the LazyFrame to validate.

        Returns:
            LazyFrame with boolean column indicating which rows pass validation.
        """
        return data.lazyframe.select(
            ((pl.col("tokens") / pl.col("wall_seconds")) - pl.col("tokens_per_sec")).abs() <= 1e-6 * pl.col("tokens_per_sec")
        )
