"""Parameter and multiply-accumulate accounting under a sharing policy.

MAC counts cover matrix products only; layer norms, softmax and additions are
not charged.
"""

from __future__ import annotations

import math

from san_attn.domain.enums import AttentionKind, ProjectionMode
from san_attn.domain.errors import RangeError
from san_attn.domain.models import ModelConfig, SharingPolicy
from san_attn.services.model import tensor_layout


def count_params(config: ModelConfig, policy: SharingPolicy) -> int:
    """Exact scalar parameter count, excluding tensors the policy discards."""
    return sum(math.prod(shape) for _, shape in tensor_layout(config, policy))


def _savings_by_kind(policy: SharingPolicy, per_layer: dict[ProjectionMode, int]) -> dict[AttentionKind, int]:
    return {kind: sum(per_layer[m] for m in policy.modes(kind)) for kind in AttentionKind}


def projection_savings(config: ModelConfig, policy: SharingPolicy) -> dict[AttentionKind, int]:
    """Discarded projection weights per attention kind."""
    d2 = config.d_model * config.d_model
    return _savings_by_kind(policy, {ProjectionMode.FULL: 0, ProjectionMode.SHARED_SELF: 2 * d2, ProjectionMode.SHARED_ENCDEC: 4 * d2})


def layer_savings(config: ModelConfig, policy: SharingPolicy) -> dict[AttentionKind, int]:
    """Every parameter a shared layer no longer stores, per attention kind.

    A SHARED_ENCDEC layer also drops the gain and bias of the norm that fed its
    query, so its layers save 4d² + 2d. The values sum to the count_params
    difference from the all-ones policy.
    """
    d = config.d_model
    return _savings_by_kind(policy, {ProjectionMode.FULL: 0, ProjectionMode.SHARED_SELF: 2 * d * d, ProjectionMode.SHARED_ENCDEC: 4 * d * d + 2 * d})


def estimate_step_flops(
    config: ModelConfig,
    policy: SharingPolicy,
    t: int,
    src_len: int | None = None,
    tgt_len: int | None = None,
) -> int:
    """MACs of cached decode step t (1-based) under the policy.

    Per decoder layer:
      - FULL self-attention: 4d² projections + t·d for QKᵀ + t·d for S·V.
      - SHARED_SELF: 2d² (w_v, w_o) + t·d for S·V.
      - FULL enc-dec: 2d² (w_q, w_o) + 2·src_len·d, plus the per-sentence K/V
        projection of the source amortized over the target, 2d²·src_len // tgt_len.
      - SHARED_ENCDEC: nothing.
      - FFN: 2·d·d_ff.
    Plus d·vocab for the output projection.

    Args:
        config: Model shape.
        policy: Sharing policy.
        t: Decode step, >= 1.
        src_len: Source length; defaults to t.
        tgt_len: Target length used to amortize the source projection; defaults to src_len.

    Raises:
        RangeError: If t < 1 or a length is not positive.
    """
    if t < 1:
        raise RangeError(f"decode step t must be >= 1, got {t}")
    src = t if src_len is None else src_len
    tgt = src if tgt_len is None else tgt_len
    if src < 1 or tgt < 1:
        raise RangeError(f"src_len and tgt_len must be positive, got {src}, {tgt}")
    d = config.d_model
    d2 = d * d

    total = d * config.vocab + config.dec_layers * 2 * d * config.d_ff
    for mode in policy.modes(AttentionKind.SELF):
        total += 4 * d2 + 2 * t * d if mode is ProjectionMode.FULL else 2 * d2 + t * d
    for mode in policy.modes(AttentionKind.ENCDEC):
        if mode is ProjectionMode.FULL:
            total += 2 * d2 + 2 * src * d + (2 * d2 * src) // tgt
    return total


def estimate_encoder_flops(config: ModelConfig, policy: SharingPolicy, src_len: int) -> int:
    """MACs of one encoder pass over a source of src_len positions."""
    if src_len < 1:
        raise RangeError(f"src_len must be >= 1, got {src_len}")
    d, n = config.d_model, src_len
    total = config.enc_layers * 2 * n * d * config.d_ff
    for mode in policy.modes(AttentionKind.ENC):
        total += 4 * n * d * d + 2 * n * n * d if mode is ProjectionMode.FULL else 2 * n * d * d + n * n * d
    return total


def mean_step_flops(config: ModelConfig, policy: SharingPolicy, steps: int, src_len: int) -> float:
    """Average per-token decoder MACs over steps 1..steps."""
    return sum(estimate_step_flops(config, policy, t, src_len, steps) for t in range(1, steps + 1)) / steps
