"""san_attn - shared attention networks: layer-wise attention sharing, policy learning and cached decoding."""

from san_attn.application import BenchReport, BenchRunner, LearnToSharePipeline, LearnToShareResult, learn_to_share
from san_attn.domain import AttentionKind, ModelConfig, ModelParams, PolicyConfig, ProjectionMode, SanError, SharingPolicy, TrainConfig

__version__ = "0.1.0"

__all__ = [
    "AttentionKind",
    "BenchReport",
    "BenchRunner",
    "LearnToSharePipeline",
    "LearnToShareResult",
    "ModelConfig",
    "ModelParams",
    "PolicyConfig",
    "ProjectionMode",
    "SanError",
    "SharingPolicy",
    "TrainConfig",
    "learn_to_share",
]
