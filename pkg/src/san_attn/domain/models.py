"""Configuration and policy value types for san_attn."""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
from numpy.typing import NDArray

from san_attn.domain.enums import AttentionKind, ProjectionMode, SearchMode
from san_attn.domain.errors import ConfigurationError

LN2 = math.log(2.0)


@dataclass(frozen=True)
class ModelConfig:
    """Shape of an encoder-decoder model.

    Attributes:
        enc_layers: Encoder layer count M_e.
        dec_layers: Decoder layer count M_d.
        heads: Attention heads h.
        d_model: Model width.
        d_ff: FFN hidden width.
        vocab: Vocabulary size, shared by source and target.
        max_len: Longest source or target sequence a session accepts.
        d_k: Per-head query/key width (defaults to d_model / heads).
        d_v: Per-head value width (defaults to d_model / heads).
        ln_eps: Layer-norm epsilon.
    """

    enc_layers: int
    dec_layers: int
    heads: int
    d_model: int
    d_ff: int
    vocab: int
    max_len: int
    d_k: int = 0
    d_v: int = 0
    ln_eps: float = 1e-6

    def __post_init__(self) -> None:
        for name in ("enc_layers", "dec_layers", "heads", "d_model", "d_ff", "vocab", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_model % self.heads:
            raise ConfigurationError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        per_head = self.d_model // self.heads
        if self.d_k == 0:
            object.__setattr__(self, "d_k", per_head)
        if self.d_v == 0:
            object.__setattr__(self, "d_v", per_head)
        if self.heads * self.d_k != self.d_model or self.heads * self.d_v != self.d_model:
            raise ConfigurationError(f"d_model must equal heads*d_k and heads*d_v (d_model={self.d_model}, h={self.heads}, d_k={self.d_k}, d_v={self.d_v})")
        if self.ln_eps <= 0:
            raise ConfigurationError(f"ln_eps must be > 0, got {self.ln_eps}")

    def layers(self, kind: AttentionKind) -> int:
        """Number of layers carrying attention of the given kind."""
        return self.enc_layers if kind is AttentionKind.ENC else self.dec_layers

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ModelConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"Unknown model config keys: {sorted(unknown)}")
        return cls(**dict(data))


def _as_blocks(values: Iterable[int]) -> tuple[int, ...]:
    return tuple(int(v) for v in values)


@dataclass(frozen=True)
class SharingPolicy:
    """Ordered block sizes partitioning each attention stack, bottom-up.

    Attributes:
        self_blocks: Decoder self-attention blocks.
        encdec_blocks: Decoder encoder-decoder attention blocks.
        enc_blocks: Encoder self-attention blocks.
    """

    self_blocks: tuple[int, ...]
    encdec_blocks: tuple[int, ...]
    enc_blocks: tuple[int, ...]

    def __post_init__(self) -> None:
        for kind in AttentionKind:
            blocks = _as_blocks(self.blocks(kind))
            object.__setattr__(self, f"{kind.value}_blocks", blocks)
            if not blocks or any(b < 1 for b in blocks):
                raise ConfigurationError(f"{kind.value} blocks must be a non-empty list of sizes >= 1, got {list(blocks)}")

    @classmethod
    def baseline(cls, enc_layers: int, dec_layers: int) -> SharingPolicy:
        """All size-1 blocks: no sharing anywhere."""
        return cls((1,) * dec_layers, (1,) * dec_layers, (1,) * enc_layers)

    @classmethod
    def uniform(
        cls,
        config: ModelConfig,
        self_blocks: Iterable[int] | None = None,
        encdec_blocks: Iterable[int] | None = None,
        enc_blocks: Iterable[int] | None = None,
    ) -> SharingPolicy:
        """Policy with the given blocks and size-1 blocks for every omitted kind."""
        policy = cls(
            _as_blocks(self_blocks) if self_blocks is not None else (1,) * config.dec_layers,
            _as_blocks(encdec_blocks) if encdec_blocks is not None else (1,) * config.dec_layers,
            _as_blocks(enc_blocks) if enc_blocks is not None else (1,) * config.enc_layers,
        )
        policy.validate(config)
        return policy

    def blocks(self, kind: AttentionKind) -> tuple[int, ...]:
        return getattr(self, f"{kind.value}_blocks")

    def validate(self, config: ModelConfig) -> None:
        """Check that every partition sums to its stack's layer count.

        Raises:
            ConfigurationError: On a partition mismatch.
        """
        for kind in AttentionKind:
            total, expected = sum(self.blocks(kind)), config.layers(kind)
            if total != expected:
                raise ConfigurationError(f"{kind.value} blocks {list(self.blocks(kind))} sum to {total}, expected {expected} layers")

    def bottoms(self, kind: AttentionKind) -> list[int]:
        """0-based index of each layer's block bottom."""
        out: list[int] = []
        start = 0
        for size in self.blocks(kind):
            out.extend([start] * size)
            start += size
        return out

    def modes(self, kind: AttentionKind) -> list[ProjectionMode]:
        """Projection presence pattern per layer."""
        shared = ProjectionMode.SHARED_ENCDEC if kind is AttentionKind.ENCDEC else ProjectionMode.SHARED_SELF
        return [ProjectionMode.FULL if bottom == i else shared for i, bottom in enumerate(self.bottoms(kind))]

    def is_baseline(self) -> bool:
        return all(b == 1 for kind in AttentionKind for b in self.blocks(kind))

    def describe(self) -> str:
        """Compact form such as ``self{1,5} encdec{3,3} enc{1,1,1}``."""
        return " ".join(f"{kind.value}{{{','.join(map(str, self.blocks(kind)))}}}" for kind in AttentionKind)

    def to_dict(self) -> dict[str, list[int]]:
        return {kind.value: list(self.blocks(kind)) for kind in AttentionKind}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SharingPolicy:
        try:
            return cls(_as_blocks(data["self"]), _as_blocks(data["encdec"]), _as_blocks(data["enc"]))
        except KeyError as e:
            raise ConfigurationError(f"Policy is missing the {e.args[0]!r} block list") from e


@dataclass(frozen=True)
class PolicyConfig:
    """Thresholds and sampling for sharing-policy search.

    Attributes:
        theta_self: Threshold for decoder self-attention blocks.
        theta_encdec: Threshold for encoder-decoder attention blocks.
        theta_enc: Threshold for encoder self-attention; None leaves the encoder unshared.
        sample_sentences: Held-out sentences used to estimate attention weights.
        search: Block admission rule for find_policy.
    """

    theta_self: float = 0.35
    theta_encdec: float = 0.45
    theta_enc: float | None = None
    sample_sentences: int = 32
    search: SearchMode = SearchMode.NESTED

    def __post_init__(self) -> None:
        object.__setattr__(self, "search", SearchMode(self.search))
        for name in ("theta_self", "theta_encdec", "theta_enc"):
            theta = getattr(self, name)
            if theta is not None and not 0.0 < theta <= LN2:
                raise ConfigurationError(f"{name} must lie in (0, ln 2], got {theta}")
        if self.sample_sentences < 1:
            raise ConfigurationError(f"sample_sentences must be positive, got {self.sample_sentences}")

    def theta(self, kind: AttentionKind) -> float | None:
        return getattr(self, f"theta_{kind.value}")


@dataclass(frozen=True)
class TrainConfig:
    """Toy-scale trainer settings.

    Attributes:
        steps: Optimizer steps.
        batch_tokens: Target tokens per batch; sentences are added until reached.
        beta1: Adam first-moment decay.
        beta2: Adam second-moment decay.
        adam_eps: Adam denominator epsilon.
        warmup: Warmup steps of the inverse-square-root schedule.
        label_smoothing: Label-smoothing mass spread uniformly over the vocabulary.
        seed: Seed for data order and parameter initialization.
        task: Synthetic task, ``copy`` or ``reverse``.
        dataset_size: Number of synthetic training sentences.
        min_len: Shortest synthetic sentence.
        max_sentence_len: Longest synthetic sentence.
        log_every: Steps between loss log lines.
        checkpoint_every: Steps between adjacent-layer JS measurements (0 disables).
    """

    steps: int = 2000
    batch_tokens: int = 64
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-9
    warmup: int = 4000
    label_smoothing: float = 0.0
    seed: int = 0
    task: str = "copy"
    dataset_size: int = 512
    min_len: int = 2
    max_sentence_len: int = 8
    log_every: int = 100
    checkpoint_every: int = 0

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ConfigurationError(f"steps must be >= 0, got {self.steps}")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ConfigurationError(f"Adam betas must lie in (0, 1), got ({self.beta1}, {self.beta2})")
        if self.warmup < 1:
            raise ConfigurationError(f"warmup must be >= 1, got {self.warmup}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigurationError(f"label_smoothing must lie in [0, 1), got {self.label_smoothing}")
        if self.task not in ("copy", "reverse"):
            raise ConfigurationError(f"Unknown task {self.task!r}; expected 'copy' or 'reverse'")
        if not 1 <= self.min_len <= self.max_sentence_len:
            raise ConfigurationError(f"Need 1 <= min_len <= max_sentence_len, got {self.min_len}, {self.max_sentence_len}")


@dataclass
class ModelParams:
    """All parameters of one model, keyed by dotted tensor name.

    Discarded projections are absent from ``tensors`` rather than zeroed.

    Attributes:
        config: Model shape.
        policy: Sharing policy the tensors were laid out for.
        tensors: Ordered mapping of tensor name to float64 array.
    """

    config: ModelConfig
    policy: SharingPolicy
    tensors: dict[str, NDArray[np.float64]] = field(default_factory=dict)

    def __getitem__(self, name: str) -> NDArray[np.float64]:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def count(self) -> int:
        """Total scalar parameters actually present."""
        return sum(int(t.size) for t in self.tensors.values())

    def copy(self) -> ModelParams:
        return ModelParams(self.config, self.policy, {k: v.copy() for k, v in self.tensors.items()})
