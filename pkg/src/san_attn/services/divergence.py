"""Jensen-Shannon machinery for comparing attention weights across layers.

JS values are in nats, bounded by ln 2. Corpus averages are token-weighted:
every query position of every sentence counts once. Sums go through
``math.fsum`` so that pooling order never changes a result.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.special import rel_entr

from san_attn.domain.enums import AttentionKind
from san_attn.domain.errors import InputError, RangeError, ShapeError, SupportError
from san_attn.domain.models import LN2
from san_attn.services.attention import AttnWeights

logger = logging.getLogger(__name__)

_SUM_TOL = 1e-9
_RANGE_TOL = 1e-12


def _check_distribution(p: NDArray[np.float64], name: str) -> None:
    if np.any(p < 0) or abs(float(p.sum()) - 1.0) > _SUM_TOL:
        raise InputError(f"{name} is not a probability distribution (sum={float(p.sum())!r})")


def kl(p: NDArray[np.float64] | Sequence[float], q: NDArray[np.float64] | Sequence[float]) -> float:
    """KL(p‖q) in nats with 0·ln(0/x) = 0.

    Raises:
        ShapeError: If lengths differ.
        InputError: If either argument is not a distribution.
        SupportError: If q is zero somewhere p is not.
    """
    p_arr, q_arr = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    if p_arr.shape != q_arr.shape:
        raise ShapeError(f"kl operands differ in shape: {p_arr.shape} vs {q_arr.shape}")
    _check_distribution(p_arr, "p")
    _check_distribution(q_arr, "q")
    if np.any((q_arr == 0) & (p_arr > 0)):
        raise SupportError("q has zero mass where p is positive")
    return max(0.0, math.fsum(rel_entr(p_arr, q_arr).tolist()))


def js(p: NDArray[np.float64] | Sequence[float], q: NDArray[np.float64] | Sequence[float]) -> float:
    """Jensen-Shannon divergence ½KL(p‖m) + ½KL(q‖m), m = (p+q)/2."""
    p_arr, q_arr = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    m = (p_arr + q_arr) / 2
    return 0.5 * kl(p_arr, m) + 0.5 * kl(q_arr, m)


def _row_js(a: AttnWeights, b: AttnWeights) -> NDArray[np.float64]:
    """JS per (head, query) row; masked keys are zero in both and contribute nothing."""
    m = (a + b) / 2
    return np.maximum(0.5 * rel_entr(a, m).sum(axis=-1) + 0.5 * rel_entr(b, m).sum(axis=-1), 0.0)


def _check_pair(a: AttnWeights, b: AttnWeights) -> None:
    if a.shape != b.shape or a.ndim != 3:
        raise ShapeError(f"attention weights differ in shape: {a.shape} vs {b.shape}")


def head_avg_js(a: AttnWeights, b: AttnWeights) -> float:
    """Mean over query rows, then over heads, of the per-row JS divergence.

    Raises:
        ShapeError: If head or query counts differ.
    """
    _check_pair(a, b)
    return float(np.mean(_row_js(a, b).mean(axis=1)))


@dataclass(frozen=True)
class JsMatrix:
    """Layer-pair JS divergences of one attention kind.

    Attributes:
        kind: Attention kind the layers belong to.
        values: Symmetric M x M matrix with a zero diagonal.
    """

    kind: AttentionKind
    values: NDArray[np.float64]

    def __post_init__(self) -> None:
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] < 1:
            raise ShapeError(f"JS matrix must be square, got {v.shape}")
        if not np.array_equal(v, v.T):
            raise InputError("JS matrix is not symmetric")
        if np.any(np.diag(v) != 0):
            raise InputError("JS matrix diagonal is not zero")
        if np.any(v < 0) or np.any(v > LN2 + _RANGE_TOL):
            raise RangeError("JS matrix entries must lie in [0, ln 2]")

    @property
    def layers(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class MuMatrix:
    """Layer-pair similarity μ(i, j) = ln 2 − JS(i, j)."""

    values: NDArray[np.float64]

    @property
    def layers(self) -> int:
        return self.values.shape[0]


def js_matrix(corpus: Sequence[Sequence[AttnWeights]], kind: AttentionKind = AttentionKind.SELF) -> JsMatrix:
    """Token-weighted layer-pair JS over a corpus.

    Args:
        corpus: Per sentence, per layer attention weights (heads, queries, keys).
        kind: Attention kind recorded on the result.

    Raises:
        InputError: If the corpus is empty or sentences disagree on the layer count.
        ShapeError: If layers within a sentence disagree on shape.
    """
    if not corpus:
        raise InputError("js_matrix needs at least one sentence")
    layers = len(corpus[0])
    if layers < 1 or any(len(sentence) != layers for sentence in corpus):
        raise InputError(f"every sentence must supply {layers} layers, got {[len(s) for s in corpus]}")

    per_pair: dict[tuple[int, int], list[float]] = {(i, j): [] for i in range(layers) for j in range(i + 1, layers)}
    rows = 0
    for sentence in corpus:
        for i, j in per_pair:
            _check_pair(sentence[i], sentence[j])
            per_pair[(i, j)].extend(_row_js(sentence[i], sentence[j]).mean(axis=0).tolist())
        rows += sentence[0].shape[1]

    values = np.zeros((layers, layers))
    for (i, j), contributions in per_pair.items():
        values[i, j] = values[j, i] = min(math.fsum(contributions) / rows, LN2)
    logger.info(f"JS matrix ({kind.value}) over {len(corpus)} sentences, {rows} query positions")
    return JsMatrix(kind=kind, values=values)


def mu_matrix(js_values: JsMatrix) -> MuMatrix:
    """Elementwise ln 2 − JS."""
    return MuMatrix(values=LN2 - js_values.values)


def block_sim(mu: MuMatrix, m: int, n: int) -> float:
    """Mean off-diagonal μ inside block b(m, n), 1-based inclusive.

    Raises:
        RangeError: Unless 1 <= m < n <= M.
    """
    if not 1 <= m < n <= mu.layers:
        raise RangeError(f"block ({m}, {n}) invalid for {mu.layers} layers; need 1 <= m < n <= M")
    block = mu.values[m - 1 : n, m - 1 : n]
    off_diagonal = block[~np.eye(n - m + 1, dtype=bool)]
    # mean taken relative to the minimum so equal entries give that entry back exactly
    low = float(off_diagonal.min())
    return low + math.fsum((off_diagonal - low).tolist()) / off_diagonal.size


def adjacent_js(weights: Sequence[AttnWeights]) -> list[float]:
    """head_avg_js between each pair of consecutive layers."""
    return [head_avg_js(weights[i], weights[i + 1]) for i in range(len(weights) - 1)]
