"""Domain layer - configuration types, enums, errors and validation schemas."""

from san_attn.domain.enums import AttentionKind, ProjectionMode, SearchMode, SpecialToken
from san_attn.domain.errors import SanError
from san_attn.domain.models import LN2, ModelConfig, ModelParams, PolicyConfig, SharingPolicy, TrainConfig
from san_attn.domain.schemas import BenchRecordSchema, corpus_token_schema, js_matrix_schema

__all__ = [
    "AttentionKind",
    "ProjectionMode",
    "SearchMode",
    "SpecialToken",
    "SanError",
    "LN2",
    "ModelConfig",
    "ModelParams",
    "PolicyConfig",
    "SharingPolicy",
    "TrainConfig",
    "BenchRecordSchema",
    "corpus_token_schema",
    "js_matrix_schema",
]
