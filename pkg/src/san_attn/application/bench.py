"""Decoding-speed benchmark across sharing policies and beam widths."""

from __future__ import annotations

import hashlib
import json
import logging
import statistics
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any

from san_attn.domain.enums import FIRST_CONTENT_TOKEN
from san_attn.domain.errors import BenchmarkError, ConfigurationError
from san_attn.domain.models import ModelConfig, ModelParams, SharingPolicy
from san_attn.services.accounting import mean_step_flops
from san_attn.services.decoding import beam_decode, greedy_decode
from san_attn.services.model import build
from san_attn.services.tensor import make_rng

logger = logging.getLogger(__name__)

BASELINE_ID = "baseline"


@dataclass(frozen=True)
class BenchConfig:
    """Benchmark workload.

    Attributes:
        batch: Independent source sentences decoded per run.
        beams: Beam widths to sweep; 1 means greedy.
        workers: Threads decoding sentences concurrently.
        repeats: Timed runs after one warm-up; the median is reported.
        src_len: Source length of the random sentences.
        tgt_len: Tokens generated per sentence (EOS does not stop decoding).
        seed: Seed for sources and random weights.
        min_wall_seconds: Smallest acceptable median wall time.
    """

    batch: int = 8
    beams: tuple[int, ...] = (1,)
    workers: int = 1
    repeats: int = 3
    src_len: int = 32
    tgt_len: int = 64
    seed: int = 0
    min_wall_seconds: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "beams", tuple(int(b) for b in self.beams))
        if self.repeats < 3:
            raise ConfigurationError(f"repeats must be >= 3, got {self.repeats}")
        for name in ("batch", "workers", "src_len", "tgt_len"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.beams or min(self.beams) < 1:
            raise ConfigurationError(f"beams must be a non-empty list of widths >= 1, got {list(self.beams)}")


@dataclass
class BenchRecord:
    """Timing of one (variant, beam) cell."""

    policy_id: str
    policy: str
    beam: int
    batch: int
    workers: int
    tokens: int
    wall_seconds: float
    tokens_per_sec: float
    flops_per_token: float
    checksum: str


@dataclass
class BenchReport:
    """Benchmark outcome: config echo, per-cell records and speedups against the baseline."""

    config: dict[str, Any]
    records: list[BenchRecord] = field(default_factory=list)
    speedups: dict[str, float] = field(default_factory=dict)

    def record(self, policy_id: str, beam: int) -> BenchRecord:
        return next(r for r in self.records if r.policy_id == policy_id and r.beam == beam)

    def to_dict(self) -> dict[str, Any]:
        return {"config": self.config, "records": [asdict(r) for r in self.records], "speedups": self.speedups}


@dataclass(frozen=True)
class BenchVariant:
    policy_id: str
    params: ModelParams


def output_checksum(outputs: Sequence[Sequence[int]]) -> str:
    """sha256 over the generated token lists."""
    return hashlib.sha256(json.dumps([list(map(int, o)) for o in outputs]).encode("utf-8")).hexdigest()


class BenchRunner:
    """Times cached decoding of a fixed random workload for each policy variant.

    Args:
        model_cfg: Model shape shared by every variant.
        bench_cfg: Workload settings.
    """

    def __init__(self, model_cfg: ModelConfig, bench_cfg: BenchConfig) -> None:
        if bench_cfg.tgt_len > model_cfg.max_len or bench_cfg.src_len > model_cfg.max_len:
            raise ConfigurationError(f"bench lengths ({bench_cfg.src_len}, {bench_cfg.tgt_len}) exceed max_len={model_cfg.max_len}")
        if model_cfg.vocab <= FIRST_CONTENT_TOKEN:
            raise ConfigurationError(f"vocab {model_cfg.vocab} has no content tokens")
        self._model_cfg = model_cfg
        self._cfg = bench_cfg
        rng = make_rng(bench_cfg.seed)
        self._sources = [rng.integers(FIRST_CONTENT_TOKEN, model_cfg.vocab, size=bench_cfg.src_len).tolist() for _ in range(bench_cfg.batch)]
        logger.info(f"BenchRunner initialized: batch={bench_cfg.batch}, src_len={bench_cfg.src_len}, tgt_len={bench_cfg.tgt_len}, workers={bench_cfg.workers}")

    def variants(
        self,
        policies: Sequence[tuple[str, SharingPolicy]],
        loaded: ModelParams | None = None,
    ) -> list[BenchVariant]:
        """Baseline first, then each named policy; a loaded model serves the variant whose policy it matches."""
        baseline = SharingPolicy.baseline(self._model_cfg.enc_layers, self._model_cfg.dec_layers)
        named = [(BASELINE_ID, baseline)] + [(pid, p) for pid, p in policies if pid != BASELINE_ID]
        out: list[BenchVariant] = []
        for pid, policy in named:
            if loaded is not None and loaded.policy == policy and loaded.config == self._model_cfg:
                out.append(BenchVariant(pid, loaded))
            else:
                out.append(BenchVariant(pid, build(self._model_cfg, policy, self._cfg.seed)))
        return out

    def _decoder(self, params: ModelParams, beam: int) -> Callable[[list[int]], list[int]]:
        tgt_len = self._cfg.tgt_len
        if beam == 1:
            return lambda src: greedy_decode(params, src, tgt_len, stop_at_eos=False)
        return lambda src: beam_decode(params, src, beam, tgt_len, stop_at_eos=False)

    def _run_once(self, pool: ThreadPoolExecutor | None, decode: Callable[[list[int]], list[int]]) -> tuple[float, list[list[int]]]:
        start = time.perf_counter()
        outputs = list(pool.map(decode, self._sources)) if pool is not None else [decode(src) for src in self._sources]
        return time.perf_counter() - start, outputs

    def _time_variant(self, variant: BenchVariant, beam: int) -> BenchRecord:
        decode = self._decoder(variant.params, beam)
        pool = ThreadPoolExecutor(max_workers=self._cfg.workers) if self._cfg.workers > 1 else None
        try:
            self._run_once(pool, decode)
            walls: list[float] = []
            checksums: set[str] = set()
            tokens = 0
            for _ in range(self._cfg.repeats):
                wall, outputs = self._run_once(pool, decode)
                walls.append(wall)
                checksums.add(output_checksum(outputs))
                tokens = sum(len(o) for o in outputs)
        finally:
            if pool is not None:
                pool.shutdown()

        if len(checksums) != 1:
            raise BenchmarkError(f"{variant.policy_id} produced different outputs across repeats")
        wall = statistics.median(walls)
        floor = max(1000 * time.get_clock_info("perf_counter").resolution, self._cfg.min_wall_seconds)
        if wall <= floor:
            raise BenchmarkError(f"median wall time {wall:.3e}s is within timer resolution (need > {floor:.3e}s); increase batch or tgt_len")

        config, policy = variant.params.config, variant.params.policy
        record = BenchRecord(
            policy_id=variant.policy_id,
            policy=policy.describe(),
            beam=beam,
            batch=self._cfg.batch,
            workers=self._cfg.workers,
            tokens=tokens,
            wall_seconds=wall,
            tokens_per_sec=tokens / wall,
            flops_per_token=mean_step_flops(config, policy, self._cfg.tgt_len, self._cfg.src_len),
            checksum=checksums.pop(),
        )
        logger.info(f"  {record.policy_id} beam={beam}: {record.tokens_per_sec:.1f} tok/s ({wall:.3f}s median)")
        return record

    def run(self, variants: Sequence[BenchVariant]) -> BenchReport:
        """Time every variant at every beam width.

        Raises:
            BenchmarkError: If the workload is too small to time or outputs drift between repeats.
            ConfigurationError: If no baseline variant is present.
        """
        if not any(v.policy_id == BASELINE_ID for v in variants):
            raise ConfigurationError("benchmark needs a baseline variant")
        report = BenchReport(config={"model": self._model_cfg.to_dict(), "bench": asdict(self._cfg) | {"beams": list(self._cfg.beams)}})
        for beam in self._cfg.beams:
            logger.info(f"=== Benchmark beam={beam} ===")
            for variant in variants:
                report.records.append(self._time_variant(variant, beam))
        for rec in report.records:
            report.speedups[f"{rec.policy_id}@beam{rec.beam}"] = rec.tokens_per_sec / report.record(BASELINE_ID, rec.beam).tokens_per_sec
        return report
