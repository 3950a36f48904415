"""Attention-weight sampling over held-out sentences."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence

from san_attn.domain.enums import AttentionKind, SpecialToken
from san_attn.domain.errors import InputError
from san_attn.domain.models import ModelParams
from san_attn.services.attention import AttnWeights
from san_attn.services.divergence import JsMatrix, adjacent_js, js_matrix
from san_attn.services.model import forward_teacher

logger = logging.getLogger(__name__)

Record = tuple[Sequence[int], Sequence[int] | None]


def decoder_input(tgt: Sequence[int] | None) -> list[int]:
    """[BOS] + tgt; a record without a target is analysed on the BOS position alone."""
    return [int(SpecialToken.BOS), *(int(t) for t in tgt or ())]


def collect_weights(params: ModelParams, records: Sequence[Record]) -> dict[AttentionKind, list[list[AttnWeights]]]:
    """Per kind, per sentence, per layer attention weights from teacher-forced passes.

    Raises:
        InputError: If no records are given.
    """
    if not records:
        raise InputError("no sentences to sample attention weights from")
    out: dict[AttentionKind, list[list[AttnWeights]]] = {kind: [] for kind in AttentionKind}
    for src, tgt in records:
        teacher = forward_teacher(params, list(src), decoder_input(tgt))
        out[AttentionKind.SELF].append(teacher.self_weights)
        out[AttentionKind.ENCDEC].append(teacher.encdec_weights)
        out[AttentionKind.ENC].append(teacher.enc_weights)
    return out


def layer_js(params: ModelParams, records: Sequence[Record], kind: AttentionKind) -> JsMatrix:
    """JsMatrix of one attention kind over the records."""
    return js_matrix(collect_weights(params, records)[kind], kind)


def adjacent_layer_js(params: ModelParams, records: Sequence[Record]) -> list[float]:
    """Decoder self-attention JS between consecutive layers, token-weighted over records."""
    weights = collect_weights(params, records)[AttentionKind.SELF]
    pairs = params.config.dec_layers - 1
    sums: list[list[float]] = [[] for _ in range(pairs)]
    rows = 0
    for sentence in weights:
        positions = sentence[0].shape[1]
        for i, value in enumerate(adjacent_js(sentence)):
            sums[i].append(value * positions)
        rows += positions
    return [math.fsum(column) / rows for column in sums]
