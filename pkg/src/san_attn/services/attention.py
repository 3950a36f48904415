"""Scaled dot-product and multi-head attention with SAN weight sharing.

Per-head tensors are laid out ``(heads, positions, width)`` and attention
weights ``(heads, queries, keys)``; every query row is a distribution over the
unmasked keys.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from san_attn.domain.enums import PROJECTIONS_BY_MODE, ProjectionMode
from san_attn.domain.errors import ConfigurationError, ShapeError, StateError
from san_attn.services.tensor import Mat, matmul, softmax_rows

logger = logging.getLogger(__name__)

AttnWeights = NDArray[np.float64]


@dataclass(frozen=True)
class ProjectionSet:
    """Attention projections of one layer; absent ones are None."""

    w_q: Mat | None = None
    w_k: Mat | None = None
    w_v: Mat | None = None
    w_o: Mat | None = None

    @property
    def mode(self) -> ProjectionMode:
        """Presence pattern.

        Raises:
            ConfigurationError: If the present projections match no pattern.
        """
        present = frozenset(name for name in ("w_q", "w_k", "w_v", "w_o") if getattr(self, name) is not None)
        for mode, names in PROJECTIONS_BY_MODE.items():
            if present == names:
                return mode
        raise ConfigurationError(f"Projection presence {sorted(present)} is not FULL, SHARED_SELF or SHARED_ENCDEC")


def causal_mask(l_q: int, l_k: int) -> NDArray[np.bool_]:
    """True above the diagonal; the last query is aligned with the last key."""
    offset = l_k - l_q
    return np.arange(l_k)[None, :] > (np.arange(l_q)[:, None] + offset)


def split_heads(x: Mat, heads: int) -> Mat:
    """(positions, heads*width) -> (heads, positions, width)."""
    length, total = x.shape
    if total % heads:
        raise ShapeError(f"width {total} not divisible by {heads} heads")
    return x.reshape(length, heads, total // heads).transpose(1, 0, 2)


def merge_heads(x: Mat) -> Mat:
    """(heads, positions, width) -> (positions, heads*width)."""
    heads, length, width = x.shape
    return x.transpose(1, 0, 2).reshape(length, heads * width)


def attn_weights(q: Mat, k: Mat, d_k: int, causal: bool = False) -> Mat:
    """Softmax(q·kᵀ/√d_k) for one head, optionally causally masked.

    Raises:
        ShapeError: If q or k width differs from d_k.
    """
    if q.shape[-1] != d_k or k.shape[-1] != d_k:
        raise ShapeError(f"query width {q.shape[-1]} / key width {k.shape[-1]} must equal d_k={d_k}")
    scores = matmul(q, k.T) / math.sqrt(d_k)
    return softmax_rows(scores, causal_mask(q.shape[0], k.shape[0]) if causal else None)


def attn_apply(s: Mat, v: Mat) -> Mat:
    """Weighted sum of values, A = S·V."""
    if s.shape[-1] != v.shape[0]:
        raise ShapeError(f"weights cover {s.shape[-1]} keys but {v.shape[0]} value rows given")
    return matmul(s, v)


def _head_weights(q: Mat, k: Mat, causal: bool) -> AttnWeights:
    d_k = q.shape[-1]
    scores = np.matmul(q, k.transpose(0, 2, 1)) / math.sqrt(d_k)
    mask = np.broadcast_to(causal_mask(q.shape[1], k.shape[1]), scores.shape) if causal else None
    return softmax_rows(scores, mask)


@dataclass
class AttentionTrace:
    """Intermediates of one multi-head attention call, kept for backprop.

    Attributes:
        q: Per-head queries, or None when S was shared in.
        k: Per-head keys, or None when S was shared in.
        v: Per-head values.
        s: Attention weights used.
        ctx: Concatenated per-head S·V, before w_o.
        out: Final output.
    """

    q: Mat | None
    k: Mat | None
    v: Mat
    s: AttnWeights
    ctx: Mat
    out: Mat


def multi_head_traced(
    x_q: Mat,
    x_kv: Mat,
    proj: ProjectionSet,
    heads: int,
    causal: bool,
    shared_s: AttnWeights | None = None,
) -> AttentionTrace:
    """multi_head returning every intermediate."""
    mode = proj.mode
    if mode is ProjectionMode.SHARED_ENCDEC:
        raise ConfigurationError("SHARED_ENCDEC layers reuse A and never run multi-head attention")
    if (shared_s is not None) != (mode is ProjectionMode.SHARED_SELF):
        raise ConfigurationError(f"shared_s {'given' if shared_s is not None else 'missing'} for a {mode.value} projection set")
    assert proj.w_v is not None and proj.w_o is not None

    v = split_heads(matmul(x_kv, proj.w_v), heads)
    if shared_s is None:
        assert proj.w_q is not None and proj.w_k is not None
        q = split_heads(matmul(x_q, proj.w_q), heads)
        k = split_heads(matmul(x_kv, proj.w_k), heads)
        s = _head_weights(q, k, causal)
    else:
        if shared_s.shape != (heads, x_q.shape[0], x_kv.shape[0]):
            raise ShapeError(f"shared weights {shared_s.shape} do not fit {heads} heads x {x_q.shape[0]} queries x {x_kv.shape[0]} keys")
        q = k = None
        s = shared_s
    ctx = merge_heads(np.matmul(s, v))
    return AttentionTrace(q=q, k=k, v=v, s=s, ctx=ctx, out=matmul(ctx, proj.w_o))


def multi_head(
    x_q: Mat,
    x_kv: Mat,
    proj: ProjectionSet,
    heads: int,
    causal: bool = False,
    shared_s: AttnWeights | None = None,
) -> tuple[Mat, AttnWeights]:
    """Multi-head attention, optionally reusing attention weights from below.

    Without shared_s the layer projects Q, K and V, computes per-head weights and
    returns them. With shared_s the Q/K projections are skipped: the given weights
    are applied to this layer's own V, and shared_s is returned unchanged.

    Raises:
        ConfigurationError: If the projection presence pattern disagrees with shared_s.
    """
    trace = multi_head_traced(x_q, x_kv, proj, heads, causal, shared_s)
    return trace.out, trace.s


def project_memory(enc_out: Mat, proj: ProjectionSet, heads: int) -> tuple[Mat, Mat]:
    """Per-head K and V of the encoder output for an enc-dec block bottom."""
    if proj.mode is not ProjectionMode.FULL:
        raise ConfigurationError(f"enc-dec block bottom needs FULL projections, got {proj.mode.value}")
    assert proj.w_k is not None and proj.w_v is not None
    return split_heads(matmul(enc_out, proj.w_k), heads), split_heads(matmul(enc_out, proj.w_v), heads)


def encdec_attend(x_q: Mat, k: Mat, v: Mat, proj: ProjectionSet) -> AttentionTrace:
    """Enc-dec attention against already projected memory K, V."""
    assert proj.w_q is not None and proj.w_o is not None
    q = split_heads(matmul(x_q, proj.w_q), k.shape[0])
    s = _head_weights(q, k, causal=False)
    ctx = merge_heads(np.matmul(s, v))
    return AttentionTrace(q=q, k=k, v=v, s=s, ctx=ctx, out=matmul(ctx, proj.w_o))


def encdec_block_bottom(x_q: Mat, enc_out: Mat, proj: ProjectionSet, heads: int) -> tuple[Mat, AttnWeights]:
    """A and S at the bottom of an enc-dec sharing block.

    A is the post-output-projection tensor that SHARED_ENCDEC layers above reuse
    verbatim.
    """
    k, v = project_memory(enc_out, proj, heads)
    trace = encdec_attend(x_q, k, v, proj)
    return trace.out, trace.s


@dataclass
class KVCache:
    """Incremental decoding state for one hypothesis.

    Appends replace arrays instead of writing into them, so ``fork`` can share
    every array with the parent.

    Attributes:
        heads: Attention heads.
        keys: Decoder layer -> cached keys (heads, steps, d_k), block bottoms only.
        values: Decoder layer -> cached values (heads, steps, d_v).
        memory: Enc-dec block bottom -> fixed projected encoder (K, V).
        length: Completed decode steps.
    """

    heads: int
    keys: dict[int, Mat] = field(default_factory=dict)
    values: dict[int, Mat] = field(default_factory=dict)
    memory: dict[int, tuple[Mat, Mat]] = field(default_factory=dict)
    length: int = 0

    def fork(self) -> KVCache:
        return KVCache(self.heads, dict(self.keys), dict(self.values), dict(self.memory), self.length)

    def rows(self, layer: int) -> int:
        """Cached rows held for a decoder layer."""
        cached = self.values.get(layer)
        return 0 if cached is None else cached.shape[1]

    def advance(self) -> None:
        """Mark the current step complete once every layer has appended."""
        self.length += 1
        for layer, cached in self.values.items():
            if cached.shape[1] != self.length:
                raise StateError(f"layer {layer} holds {cached.shape[1]} rows after step {self.length}")


def _append(cached: Mat | None, row: Mat) -> Mat:
    return row if cached is None else np.concatenate([cached, row], axis=1)


def self_attn_step(
    cache: KVCache,
    layer: int,
    x_new: Mat,
    proj: ProjectionSet,
    shared_s_row: AttnWeights | None = None,
) -> tuple[Mat, AttnWeights]:
    """Self-attention output for the newest position only.

    Appends this step's value (and key, at block bottoms) to the cache, then
    attends the newest query over positions 1..t. A shared layer reuses the block
    bottom's weight row and needs no query or key.

    Raises:
        StateError: If the layer's cache does not hold exactly t-1 prior steps.
    """
    if x_new.shape[0] != 1:
        raise ShapeError(f"self_attn_step takes a single position, got {x_new.shape[0]}")
    if cache.rows(layer) != cache.length:
        raise StateError(f"layer {layer} caches {cache.rows(layer)} rows but {cache.length} steps are complete")
    heads = cache.heads
    mode = proj.mode
    if mode is ProjectionMode.SHARED_ENCDEC or (shared_s_row is not None) != (mode is ProjectionMode.SHARED_SELF):
        raise ConfigurationError(f"{mode.value} projection set is inconsistent with shared_s_row={'given' if shared_s_row is not None else 'missing'}")
    assert proj.w_v is not None and proj.w_o is not None

    values = _append(cache.values.get(layer), split_heads(matmul(x_new, proj.w_v), heads))
    cache.values[layer] = values
    if shared_s_row is None:
        assert proj.w_q is not None and proj.w_k is not None
        keys = _append(cache.keys.get(layer), split_heads(matmul(x_new, proj.w_k), heads))
        cache.keys[layer] = keys
        q = split_heads(matmul(x_new, proj.w_q), heads)
        s_row = _head_weights(q, keys, causal=False)
    else:
        if shared_s_row.shape != (heads, 1, values.shape[1]):
            raise StateError(f"shared weight row {shared_s_row.shape} does not cover {values.shape[1]} cached positions")
        s_row = shared_s_row
    out = matmul(merge_heads(np.matmul(s_row, values)), proj.w_o)
    return out, s_row
