"""Encoder-decoder stacks assembled under a sharing policy.

Layers use pre-norm residual wiring (norm -> sub-layer -> add). Source and
target share one embedding matrix; the output projection is untied. Tensor
names are dotted paths such as ``dec.3.self.w_q``; a tensor that the policy
discards is absent from ``ModelParams.tensors``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from san_attn.domain.enums import PROJECTIONS_BY_MODE, AttentionKind, ProjectionMode, SpecialToken
from san_attn.domain.errors import CapacityError, InputError
from san_attn.domain.models import ModelConfig, ModelParams, SharingPolicy
from san_attn.services.attention import (
    AttentionTrace,
    AttnWeights,
    KVCache,
    ProjectionSet,
    encdec_attend,
    multi_head_traced,
    project_memory,
    self_attn_step,
)
from san_attn.services.tensor import Mat, layer_norm, make_rng, seeded_gaussian, sinusoidal_positions

logger = logging.getLogger(__name__)

_PROJECTION_NAMES = ("w_q", "w_k", "w_v", "w_o")


def _attention_layout(prefix: str, mode: ProjectionMode, d: int) -> list[tuple[str, tuple[int, ...]]]:
    present = PROJECTIONS_BY_MODE[mode]
    return [(f"{prefix}.{name}", (d, d)) for name in _PROJECTION_NAMES if name in present]


def _norm_layout(prefix: str, d: int) -> list[tuple[str, tuple[int, ...]]]:
    return [(f"{prefix}.g", (d,)), (f"{prefix}.b", (d,))]


def _ffn_layout(prefix: str, d: int, d_ff: int) -> list[tuple[str, tuple[int, ...]]]:
    return [(f"{prefix}.w1", (d, d_ff)), (f"{prefix}.b1", (d_ff,)), (f"{prefix}.w2", (d_ff, d)), (f"{prefix}.b2", (d,))]


def tensor_layout(config: ModelConfig, policy: SharingPolicy) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) of every tensor present under the policy.

    A SHARED_ENCDEC decoder layer stores neither cross projections nor the
    ln2 norm that would feed its query.

    Raises:
        ConfigurationError: If the policy does not partition the configured stacks.
    """
    policy.validate(config)
    d, d_ff, vocab = config.d_model, config.d_ff, config.vocab
    layout: list[tuple[str, tuple[int, ...]]] = [("embed", (vocab, d))]

    for i, mode in enumerate(policy.modes(AttentionKind.ENC)):
        layout += _norm_layout(f"enc.{i}.ln1", d)
        layout += _attention_layout(f"enc.{i}.self", mode, d)
        layout += _norm_layout(f"enc.{i}.ln2", d)
        layout += _ffn_layout(f"enc.{i}.ffn", d, d_ff)
    layout += _norm_layout("enc.ln_f", d)

    self_modes = policy.modes(AttentionKind.SELF)
    cross_modes = policy.modes(AttentionKind.ENCDEC)
    for i in range(config.dec_layers):
        layout += _norm_layout(f"dec.{i}.ln1", d)
        layout += _attention_layout(f"dec.{i}.self", self_modes[i], d)
        if cross_modes[i] is not ProjectionMode.SHARED_ENCDEC:
            layout += _norm_layout(f"dec.{i}.ln2", d)
        layout += _attention_layout(f"dec.{i}.cross", cross_modes[i], d)
        layout += _norm_layout(f"dec.{i}.ln3", d)
        layout += _ffn_layout(f"dec.{i}.ffn", d, d_ff)
    layout += _norm_layout("dec.ln_f", d)
    layout.append(("out_proj", (d, vocab)))
    return layout


def build(config: ModelConfig, policy: SharingPolicy, seed: int) -> ModelParams:
    """Deterministically initialize a model laid out for the policy.

    Weight matrices are N(0, 1/d_model); norm gains are 1 and all biases 0.
    Discarded projections are not drawn at all.

    Raises:
        ConfigurationError: If the policy does not partition the configured stacks.
    """
    rng = make_rng(seed)
    std = config.d_model**-0.5
    tensors: dict[str, Mat] = {}
    for name, shape in tensor_layout(config, policy):
        if len(shape) == 2:
            tensors[name] = seeded_gaussian(shape[0], shape[1], std, rng)
        elif name.endswith(".g"):
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = np.zeros(shape)
    params = ModelParams(config, policy, tensors)
    logger.info(f"Built model {policy.describe()} with {params.count()} parameters (seed={seed})")
    return params


def projection_set(params: ModelParams, prefix: str) -> ProjectionSet:
    t = params.tensors
    return ProjectionSet(t.get(f"{prefix}.w_q"), t.get(f"{prefix}.w_k"), t.get(f"{prefix}.w_v"), t.get(f"{prefix}.w_o"))


@lru_cache(maxsize=8)
def _positions(max_len: int, d_model: int) -> Mat:
    table = sinusoidal_positions(max_len, d_model)
    table.setflags(write=False)
    return table


def check_tokens(config: ModelConfig, tokens: list[int] | np.ndarray, what: str) -> np.ndarray:
    """Validate a token sequence against vocab and max_len.

    Raises:
        InputError: On an empty sequence, an out-of-range id or an over-long sequence.
    """
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise InputError(f"{what} must be a non-empty id sequence")
    if ids.size > config.max_len:
        raise InputError(f"{what} length {ids.size} exceeds max_len={config.max_len}")
    bad = np.flatnonzero((ids < 0) | (ids >= config.vocab))
    if bad.size:
        raise InputError(f"{what} id {int(ids[bad[0]])} at position {int(bad[0])} outside vocab of {config.vocab}")
    return ids


def embed(params: ModelParams, ids: np.ndarray, start: int = 0) -> Mat:
    """Scaled token embeddings plus sinusoidal positions start..start+len-1."""
    config = params.config
    positions = _positions(config.max_len, config.d_model)
    return params["embed"][ids] * math.sqrt(config.d_model) + positions[start : start + len(ids)]


def _norm(params: ModelParams, prefix: str, x: Mat) -> Mat:
    return layer_norm(x, params[f"{prefix}.g"], params[f"{prefix}.b"], params.config.ln_eps)


def _ffn(params: ModelParams, prefix: str, x: Mat) -> tuple[Mat, Mat]:
    hidden = x @ params[f"{prefix}.w1"] + params[f"{prefix}.b1"]
    return hidden, np.maximum(hidden, 0.0) @ params[f"{prefix}.w2"] + params[f"{prefix}.b2"]


@dataclass
class LayerTrace:
    """Inputs of each sub-layer of one layer, kept for backprop.

    Attributes:
        x_self: Residual stream entering the self-attention sub-layer.
        self_attn: Self-attention intermediates.
        x_cross: Residual stream entering enc-dec attention (decoder only).
        cross_attn: Enc-dec intermediates; None for SHARED_ENCDEC layers.
        x_ffn: Residual stream entering the FFN.
        ffn_hidden: FFN pre-activation.
    """

    x_self: Mat
    self_attn: AttentionTrace
    x_ffn: Mat
    ffn_hidden: Mat
    x_cross: Mat | None = None
    cross_attn: AttentionTrace | None = None


@dataclass
class ForwardTrace:
    """Everything a teacher-forced forward pass computed."""

    src: np.ndarray
    tgt: np.ndarray
    enc_layers: list[LayerTrace] = field(default_factory=list)
    enc_pre_norm: Mat | None = None
    enc_out: Mat | None = None
    dec_layers: list[LayerTrace] = field(default_factory=list)
    dec_pre_norm: Mat | None = None
    dec_out: Mat | None = None
    logits: Mat | None = None


@dataclass
class TeacherOutput:
    """Logits and per-layer attention weights of a teacher-forced pass.

    Shared layers report their block bottom's weights, so every list has one
    entry per layer.
    """

    logits: Mat
    self_weights: list[AttnWeights]
    encdec_weights: list[AttnWeights]
    enc_weights: list[AttnWeights]


def _encode_traced(params: ModelParams, src_ids: np.ndarray, trace: ForwardTrace) -> Mat:
    config = params.config
    bottoms = params.policy.bottoms(AttentionKind.ENC)
    x = embed(params, src_ids)
    for i in range(config.enc_layers):
        shared = trace.enc_layers[bottoms[i]].self_attn.s if bottoms[i] != i else None
        a_in = _norm(params, f"enc.{i}.ln1", x)
        attn = multi_head_traced(a_in, a_in, projection_set(params, f"enc.{i}.self"), config.heads, False, shared)
        x_ffn = x + attn.out
        hidden, ffn_out = _ffn(params, f"enc.{i}.ffn", _norm(params, f"enc.{i}.ln2", x_ffn))
        trace.enc_layers.append(LayerTrace(x_self=x, self_attn=attn, x_ffn=x_ffn, ffn_hidden=hidden))
        x = x_ffn + ffn_out
    trace.enc_pre_norm = x
    trace.enc_out = _norm(params, "enc.ln_f", x)
    return trace.enc_out


def encode(params: ModelParams, src_tokens: list[int] | np.ndarray) -> Mat:
    """Encoder stack output, one row per source position.

    Raises:
        InputError: If an id is outside the vocabulary or the source is too long.
    """
    src = check_tokens(params.config, src_tokens, "source")
    return _encode_traced(params, src, ForwardTrace(src=src, tgt=np.empty(0, dtype=np.int64)))


def forward_traced(params: ModelParams, src_tokens: list[int] | np.ndarray, tgt_tokens: list[int] | np.ndarray) -> ForwardTrace:
    """Teacher-forced forward keeping every intermediate.

    Args:
        params: Model.
        src_tokens: Source ids.
        tgt_tokens: Decoder input ids, normally starting with BOS.
    """
    config = params.config
    src = check_tokens(config, src_tokens, "source")
    tgt = check_tokens(config, tgt_tokens, "target")
    trace = ForwardTrace(src=src, tgt=tgt)
    enc_out = _encode_traced(params, src, trace)

    self_bottoms = params.policy.bottoms(AttentionKind.SELF)
    cross_bottoms = params.policy.bottoms(AttentionKind.ENCDEC)
    y = embed(params, tgt)
    for i in range(config.dec_layers):
        shared = trace.dec_layers[self_bottoms[i]].self_attn.s if self_bottoms[i] != i else None
        a_in = _norm(params, f"dec.{i}.ln1", y)
        attn = multi_head_traced(a_in, a_in, projection_set(params, f"dec.{i}.self"), config.heads, True, shared)
        x_cross = y + attn.out

        if cross_bottoms[i] == i:
            proj = projection_set(params, f"dec.{i}.cross")
            k, v = project_memory(enc_out, proj, config.heads)
            cross = encdec_attend(_norm(params, f"dec.{i}.ln2", x_cross), k, v, proj)
            context = cross.out
        else:
            cross = None
            bottom = trace.dec_layers[cross_bottoms[i]].cross_attn
            assert bottom is not None
            context = bottom.out
        x_ffn = x_cross + context

        hidden, ffn_out = _ffn(params, f"dec.{i}.ffn", _norm(params, f"dec.{i}.ln3", x_ffn))
        trace.dec_layers.append(LayerTrace(x_self=y, self_attn=attn, x_ffn=x_ffn, ffn_hidden=hidden, x_cross=x_cross, cross_attn=cross))
        y = x_ffn + ffn_out

    trace.dec_pre_norm = y
    trace.dec_out = _norm(params, "dec.ln_f", y)
    trace.logits = trace.dec_out @ params["out_proj"]
    return trace


def forward_teacher(params: ModelParams, src_tokens: list[int] | np.ndarray, tgt_tokens: list[int] | np.ndarray) -> TeacherOutput:
    """Full-sequence causal forward with attention weights captured per layer."""
    trace = forward_traced(params, src_tokens, tgt_tokens)
    cross_bottoms = params.policy.bottoms(AttentionKind.ENCDEC)
    encdec: list[AttnWeights] = []
    for i in range(params.config.dec_layers):
        bottom = trace.dec_layers[cross_bottoms[i]].cross_attn
        assert bottom is not None
        encdec.append(bottom.s)
    assert trace.logits is not None
    return TeacherOutput(
        logits=trace.logits,
        self_weights=[layer.self_attn.s for layer in trace.dec_layers],
        encdec_weights=encdec,
        enc_weights=[layer.self_attn.s for layer in trace.enc_layers],
    )


class DecodeSession:
    """Incremental decoding state for one sentence (or one beam hypothesis).

    Args:
        params: Model; never mutated.
        src_tokens: Source ids. Omit when forking.
    """

    def __init__(self, params: ModelParams, src_tokens: list[int] | np.ndarray | None = None) -> None:
        self.params = params
        self.prefix: list[int] = []
        config = params.config
        self._self_bottoms = params.policy.bottoms(AttentionKind.SELF)
        self._cross_bottoms = params.policy.bottoms(AttentionKind.ENCDEC)
        self._self_proj = [projection_set(params, f"dec.{i}.self") for i in range(config.dec_layers)]
        self._cross_proj = [projection_set(params, f"dec.{i}.cross") for i in range(config.dec_layers)]
        self.cache = KVCache(config.heads)
        if src_tokens is not None:
            enc_out = encode(params, src_tokens)
            for i in sorted(set(self._cross_bottoms)):
                self.cache.memory[i] = project_memory(enc_out, self._cross_proj[i], config.heads)

    @property
    def step(self) -> int:
        """Completed decode steps."""
        return self.cache.length

    def fork(self) -> DecodeSession:
        """Independent copy sharing all immutable state."""
        child = DecodeSession.__new__(DecodeSession)
        child.params = self.params
        child.prefix = list(self.prefix)
        child._self_bottoms = self._self_bottoms
        child._cross_bottoms = self._cross_bottoms
        child._self_proj = self._self_proj
        child._cross_proj = self._cross_proj
        child.cache = self.cache.fork()
        return child

    def decode_step(self, token: int) -> np.ndarray:
        """Feed one token and return next-token logits (vocab,).

        Raises:
            CapacityError: If the session already holds max_len steps.
            InputError: If token is outside the vocabulary.
        """
        params, config = self.params, self.params.config
        if self.step >= config.max_len:
            raise CapacityError(f"decode session is full at max_len={config.max_len}")
        if not 0 <= token < config.vocab:
            raise InputError(f"token {token} outside vocab of {config.vocab}")

        y = embed(params, np.array([token]), start=self.step)
        s_rows: dict[int, AttnWeights] = {}
        contexts: dict[int, Mat] = {}
        for i in range(config.dec_layers):
            a_in = _norm(params, f"dec.{i}.ln1", y)
            shared = s_rows[self._self_bottoms[i]] if self._self_bottoms[i] != i else None
            out, s_row = self_attn_step(self.cache, i, a_in, self._self_proj[i], shared)
            s_rows.setdefault(i, s_row)
            y = y + out

            bottom = self._cross_bottoms[i]
            if bottom == i:
                k, v = self.cache.memory[i]
                contexts[i] = encdec_attend(_norm(params, f"dec.{i}.ln2", y), k, v, self._cross_proj[i]).out
            y = y + contexts[bottom]

            _, ffn_out = _ffn(params, f"dec.{i}.ffn", _norm(params, f"dec.{i}.ln3", y))
            y = y + ffn_out

        self.cache.advance()
        self.prefix.append(int(token))
        return (_norm(params, "dec.ln_f", y) @ params["out_proj"])[0]


def decode_step(session: DecodeSession, token: int) -> np.ndarray:
    """Advance a session by one token; see DecodeSession.decode_step."""
    return session.decode_step(token)


def start_session(params: ModelParams, src_tokens: list[int] | np.ndarray) -> DecodeSession:
    return DecodeSession(params, src_tokens)


BOS = int(SpecialToken.BOS)
EOS = int(SpecialToken.EOS)
