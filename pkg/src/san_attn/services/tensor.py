"""Dense float64 kernels shared by every other module.

Matrices are plain ``numpy`` arrays of dtype float64. Kernels that work row-wise
(softmax_rows, layer_norm) also accept stacked arrays and operate on the last
axis, which is how attention applies them to all heads at once.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

from san_attn.domain.errors import DegenerateRowError, NumericError, ShapeError

Mat = NDArray[np.float64]
Rng = np.random.Generator


def make_rng(seed: int) -> Rng:
    """PCG64 generator; identical seeds give identical streams on every platform."""
    return np.random.Generator(np.random.PCG64(seed))


def _ensure_finite(x: Mat, op: str) -> Mat:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{op} produced non-finite values")
    return x


def matmul(a: Mat, b: Mat) -> Mat:
    """Matrix product a·b.

    Raises:
        ShapeError: If a.cols != b.rows.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return _ensure_finite(a @ b, "matmul")


def softmax_rows(m: Mat, mask: NDArray[np.bool_] | None = None) -> Mat:
    """Row-wise softmax with max subtraction.

    Args:
        m: Scores; normalized along the last axis.
        mask: Optional boolean array of the same shape; True marks an entry as
            excluded. Excluded entries come out exactly 0.

    Raises:
        ShapeError: If mask shape differs from m.
        DegenerateRowError: If some row has every entry masked.
    """
    if mask is None:
        shifted = m - m.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)

    if mask.shape != m.shape:
        raise ShapeError(f"mask shape {mask.shape} does not match scores {m.shape}")
    if np.any(mask.all(axis=-1)):
        raise DegenerateRowError("softmax row has every entry masked")
    z = np.where(mask, -np.inf, m)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(s: Mat, ds: Mat) -> Mat:
    """Gradient w.r.t. softmax inputs given outputs s and upstream ds."""
    return s * (ds - (ds * s).sum(axis=-1, keepdims=True))


def layer_norm(x: Mat, gain: NDArray[np.float64], bias: NDArray[np.float64], eps: float) -> Mat:
    """Normalize each row to zero mean and unit variance, then scale and shift.

    Raises:
        ShapeError: If gain/bias length differs from the row width.
        ValueError: If eps is not positive.
    """
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm gain {gain.shape} / bias {bias.shape} do not match width {x.shape[-1]}")
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be > 0, got {eps}")
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * gain + bias


def layer_norm_backward(x: Mat, gain: NDArray[np.float64], eps: float, dy: Mat) -> tuple[Mat, NDArray[np.float64], NDArray[np.float64]]:
    """Gradients (dx, dgain, dbias) of layer_norm for 2-D x."""
    mean = x.mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(((x - mean) ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = (x - mean) * rstd
    dxhat = dy * gain
    dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, (dy * xhat).sum(axis=0), dy.sum(axis=0)


def seeded_gaussian(rows: int, cols: int, std: float, rng: Rng) -> Mat:
    """rows x cols matrix of N(0, std^2) draws from rng."""
    if std < 0:
        raise ValueError(f"std must be >= 0, got {std}")
    return rng.standard_normal((rows, cols)) * std


def sinusoidal_positions(length: int, d_model: int) -> Mat:
    """Fixed sine/cosine position encodings, one row per position."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    rates = np.power(10000.0, -np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(pos * rates)
    table[:, 1::2] = np.cos(pos * rates[: d_model // 2])
    return table

