"""Enum definitions for san_attn domain."""

from enum import IntEnum, StrEnum


class AttentionKind(StrEnum):
    """Which attention sub-layer a sharing policy or JS matrix refers to."""

    SELF = "self"  # decoder self-attention
    ENCDEC = "encdec"  # decoder encoder-decoder attention
    ENC = "enc"  # encoder self-attention


class ProjectionMode(StrEnum):
    """Presence pattern of a layer's attention projections."""

    FULL = "full"  # w_q, w_k, w_v, w_o
    SHARED_SELF = "shared_self"  # w_v, w_o; S comes from the block bottom
    SHARED_ENCDEC = "shared_encdec"  # nothing; A comes from the block bottom


class SearchMode(StrEnum):
    """How find_policy admits a candidate block."""

    NESTED = "nested"  # every leading sub-block must also pass the threshold
    OUTERMOST = "outermost"  # only the candidate block itself is tested


class SpecialToken(IntEnum):
    """Reserved vocabulary ids."""

    PAD = 0
    BOS = 1
    EOS = 2


# Projection names present under each mode
PROJECTIONS_BY_MODE: dict[ProjectionMode, frozenset[str]] = {
    ProjectionMode.FULL: frozenset({"w_q", "w_k", "w_v", "w_o"}),
    ProjectionMode.SHARED_SELF: frozenset({"w_v", "w_o"}),
    ProjectionMode.SHARED_ENCDEC: frozenset(),
}

FIRST_CONTENT_TOKEN = 3
