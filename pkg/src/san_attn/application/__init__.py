"""Application layer - LearnToShare loop and decoding benchmark orchestration."""

from san_attn.application.bench import BenchConfig, BenchRecord, BenchReport, BenchRunner
from san_attn.application.learn_to_share import IterationRecord, LearnToSharePipeline, LearnToShareResult, learn_to_share

__all__ = [
    "BenchConfig",
    "BenchRecord",
    "BenchReport",
    "BenchRunner",
    "IterationRecord",
    "LearnToSharePipeline",
    "LearnToShareResult",
    "learn_to_share",
]
