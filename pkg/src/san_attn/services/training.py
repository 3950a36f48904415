"""Toy-scale training: analytic gradients, Adam with warmup, synthetic tasks.

The backward pass walks a ForwardTrace in reverse. Gradients reaching a shared
attention weight S (or a shared enc-dec output A) are summed over the block and
routed once through the block bottom, which owns the Q/K (or all) projections.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, softmax

from san_attn.domain.enums import FIRST_CONTENT_TOKEN, AttentionKind, SpecialToken
from san_attn.domain.errors import InputError, NumericError, RangeError, TrainingError
from san_attn.domain.models import ModelParams, TrainConfig
from san_attn.services.attention import AttentionTrace, merge_heads, split_heads
from san_attn.services.model import ForwardTrace, LayerTrace, forward_traced
from san_attn.services.tensor import Mat, layer_norm, layer_norm_backward, make_rng, softmax_backward

logger = logging.getLogger(__name__)

Pair = tuple[list[int], list[int]]
Grads = dict[str, Mat]


def teacher_forcing(tgt: Sequence[int]) -> tuple[list[int], list[int]]:
    """Decoder inputs [BOS]+tgt and labels tgt+[EOS]."""
    return [int(SpecialToken.BOS), *map(int, tgt)], [*map(int, tgt), int(SpecialToken.EOS)]


def _smoothed_targets(labels: np.ndarray, vocab: int, label_smoothing: float) -> Mat:
    q = np.full((labels.size, vocab), label_smoothing / vocab)
    q[np.arange(labels.size), labels] += 1.0 - label_smoothing
    return q


def _sentence_loss(params: ModelParams, src: Sequence[int], tgt: Sequence[int], label_smoothing: float) -> tuple[float, int, ForwardTrace, Mat]:
    tgt_in, labels = teacher_forcing(tgt)
    trace = forward_traced(params, src, tgt_in)
    assert trace.logits is not None
    q = _smoothed_targets(np.asarray(labels), params.config.vocab, label_smoothing)
    loss_sum = -float(np.sum(q * log_softmax(trace.logits, axis=-1)))
    return loss_sum, len(labels), trace, q


def batch_loss(params: ModelParams, batch: Sequence[Pair], label_smoothing: float = 0.0) -> float:
    """Mean per-token cross-entropy without gradients."""
    if not batch:
        raise InputError("batch is empty")
    total, tokens = 0.0, 0
    for src, tgt in batch:
        loss_sum, count, _, _ = _sentence_loss(params, src, tgt, label_smoothing)
        total += loss_sum
        tokens += count
    return total / tokens


class _Backprop:
    """Reverse pass over one sentence's trace, accumulating into shared grads."""

    def __init__(self, params: ModelParams, grads: Grads) -> None:
        self.params = params
        self.grads = grads
        self.eps = params.config.ln_eps
        self.heads = params.config.heads
        self.scale = 1.0 / math.sqrt(params.config.d_k)

    def _add(self, name: str, value: Mat) -> None:
        self.grads[name] += value

    def norm(self, prefix: str, x: Mat, dy: Mat) -> Mat:
        dx, dg, db = layer_norm_backward(x, self.params[f"{prefix}.g"], self.eps, dy)
        self._add(f"{prefix}.g", dg)
        self._add(f"{prefix}.b", db)
        return dx

    def _normed(self, prefix: str, x: Mat) -> Mat:
        return layer_norm(x, self.params[f"{prefix}.g"], self.params[f"{prefix}.b"], self.eps)

    def ffn(self, prefix: str, norm_prefix: str, x: Mat, hidden: Mat, dy: Mat) -> Mat:
        """Gradient of x + FFN(LN(x)) w.r.t. x."""
        f_in = self._normed(norm_prefix, x)
        active = np.maximum(hidden, 0.0)
        self._add(f"{prefix}.w2", active.T @ dy)
        self._add(f"{prefix}.b2", dy.sum(axis=0))
        dh = (dy @ self.params[f"{prefix}.w2"].T) * (hidden > 0)
        self._add(f"{prefix}.w1", f_in.T @ dh)
        self._add(f"{prefix}.b1", dh.sum(axis=0))
        return dy + self.norm(norm_prefix, x, dh @ self.params[f"{prefix}.w1"].T)

    def attention_output(self, prefix: str, trace: AttentionTrace, dout: Mat) -> tuple[Mat, Mat]:
        """Through w_o and S·V: returns (dS, dV) per head."""
        self._add(f"{prefix}.w_o", trace.ctx.T @ dout)
        dctx = split_heads(dout @ self.params[f"{prefix}.w_o"].T, self.heads)
        return np.matmul(dctx, trace.v.transpose(0, 2, 1)), np.matmul(trace.s.transpose(0, 2, 1), dctx)

    def attention_scores(self, trace: AttentionTrace, ds: Mat) -> tuple[Mat, Mat]:
        """Through softmax(QKᵀ/√d_k): returns (dQ, dK) merged across heads."""
        assert trace.q is not None and trace.k is not None
        dz = softmax_backward(trace.s, ds) * self.scale
        return merge_heads(np.matmul(dz, trace.k)), merge_heads(np.matmul(dz.transpose(0, 2, 1), trace.q))

    def self_sublayer(self, prefix: str, norm_prefix: str, layer: LayerTrace, dout: Mat, ds_pending: dict[int, Mat], index: int, bottom: int) -> Mat:
        """Gradient of x + SelfAttn(LN(x)) w.r.t. x; dS is parked until the block bottom."""
        a_in = self._normed(norm_prefix, layer.x_self)
        ds, dv = self.attention_output(prefix, layer.self_attn, dout)
        dv = merge_heads(dv)
        self._add(f"{prefix}.w_v", a_in.T @ dv)
        da_in = dv @ self.params[f"{prefix}.w_v"].T
        ds_pending[bottom] = ds_pending.get(bottom, 0) + ds
        if bottom == index:
            dq, dk = self.attention_scores(layer.self_attn, ds_pending.pop(bottom))
            self._add(f"{prefix}.w_q", a_in.T @ dq)
            self._add(f"{prefix}.w_k", a_in.T @ dk)
            da_in = da_in + dq @ self.params[f"{prefix}.w_q"].T + dk @ self.params[f"{prefix}.w_k"].T
        return dout + self.norm(norm_prefix, layer.x_self, da_in)

    def cross_sublayer(self, prefix: str, norm_prefix: str, layer: LayerTrace, da: Mat, enc_out: Mat, d_enc_out: Mat) -> Mat:
        """Gradient of the block bottom's LN input, given dA summed over its block."""
        trace = layer.cross_attn
        assert trace is not None and layer.x_cross is not None
        c_in = self._normed(norm_prefix, layer.x_cross)
        ds, dv = self.attention_output(prefix, trace, da)
        dq, dk = self.attention_scores(trace, ds)
        dv = merge_heads(dv)
        self._add(f"{prefix}.w_q", c_in.T @ dq)
        self._add(f"{prefix}.w_k", enc_out.T @ dk)
        self._add(f"{prefix}.w_v", enc_out.T @ dv)
        d_enc_out += dk @ self.params[f"{prefix}.w_k"].T + dv @ self.params[f"{prefix}.w_v"].T
        return self.norm(norm_prefix, layer.x_cross, dq @ self.params[f"{prefix}.w_q"].T)

    def embedding(self, ids: np.ndarray, dx: Mat) -> None:
        np.add.at(self.grads["embed"], ids, dx * math.sqrt(self.params.config.d_model))

    def sentence(self, trace: ForwardTrace, dlogits: Mat) -> None:
        params, config = self.params, self.params.config
        assert trace.dec_out is not None and trace.dec_pre_norm is not None and trace.enc_out is not None and trace.enc_pre_norm is not None
        self._add("out_proj", trace.dec_out.T @ dlogits)
        dy = self.norm("dec.ln_f", trace.dec_pre_norm, dlogits @ params["out_proj"].T)

        self_bottoms = params.policy.bottoms(AttentionKind.SELF)
        cross_bottoms = params.policy.bottoms(AttentionKind.ENCDEC)
        ds_pending: dict[int, Mat] = {}
        da_pending: dict[int, Mat] = {}
        d_enc_out = np.zeros_like(trace.enc_out)
        for i in reversed(range(config.dec_layers)):
            layer = trace.dec_layers[i]
            dx = self.ffn(f"dec.{i}.ffn", f"dec.{i}.ln3", layer.x_ffn, layer.ffn_hidden, dy)
            bottom = cross_bottoms[i]
            da_pending[bottom] = da_pending.get(bottom, 0) + dx
            if bottom == i:
                dx = dx + self.cross_sublayer(f"dec.{i}.cross", f"dec.{i}.ln2", layer, da_pending.pop(i), trace.enc_out, d_enc_out)
            dy = self.self_sublayer(f"dec.{i}.self", f"dec.{i}.ln1", layer, dx, ds_pending, i, self_bottoms[i])
        self.embedding(trace.tgt, dy)

        enc_bottoms = params.policy.bottoms(AttentionKind.ENC)
        enc_pending: dict[int, Mat] = {}
        dx = self.norm("enc.ln_f", trace.enc_pre_norm, d_enc_out)
        for i in reversed(range(config.enc_layers)):
            layer = trace.enc_layers[i]
            dx = self.ffn(f"enc.{i}.ffn", f"enc.{i}.ln2", layer.x_ffn, layer.ffn_hidden, dx)
            dx = self.self_sublayer(f"enc.{i}.self", f"enc.{i}.ln1", layer, dx, enc_pending, i, enc_bottoms[i])
        self.embedding(trace.src, dx)


def loss_and_grads(params: ModelParams, batch: Sequence[Pair], label_smoothing: float = 0.0, loss_weight: float = 1.0) -> tuple[float, Grads]:
    """Mean per-token cross-entropy and its gradient for every present tensor.

    Args:
        params: Model.
        batch: (src, tgt) pairs; tgt is shifted internally for teacher forcing.
        label_smoothing: Mass spread uniformly over the vocabulary.
        loss_weight: Multiplier on the loss before differentiation.

    Returns:
        (loss, grads). Discarded projections have no entry in grads.

    Raises:
        InputError: If the batch is empty.
    """
    if not batch:
        raise InputError("batch is empty")
    grads: Grads = {name: np.zeros_like(t) for name, t in params.tensors.items()}
    sentences = [_sentence_loss(params, src, tgt, label_smoothing) for src, tgt in batch]
    tokens = sum(count for _, count, _, _ in sentences)
    backprop = _Backprop(params, grads)
    for _, _, trace, q in sentences:
        assert trace.logits is not None
        backprop.sentence(trace, (softmax(trace.logits, axis=-1) - q) * (loss_weight / tokens))
    return loss_weight * sum(loss for loss, _, _, _ in sentences) / tokens, grads


def lr_at(t: int, d_model: int, warmup: int) -> float:
    """d^-0.5 · min(t^-0.5, t · warmup^-1.5).

    Raises:
        RangeError: If t < 1.
    """
    if t < 1:
        raise RangeError(f"learning-rate step must be >= 1, got {t}")
    return d_model**-0.5 * min(t**-0.5, t * warmup**-1.5)


class AdamOptimizer:
    """Adam over a ModelParams tensor dict, updating arrays in place."""

    def __init__(self, params: ModelParams, beta1: float, beta2: float, eps: float) -> None:
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self._m = {name: np.zeros_like(t) for name, t in params.tensors.items()}
        self._v = {name: np.zeros_like(t) for name, t in params.tensors.items()}
        self.steps = 0

    def step(self, params: ModelParams, grads: Grads, lr: float) -> None:
        self.steps += 1
        c1 = 1.0 - self.beta1**self.steps
        c2 = 1.0 - self.beta2**self.steps
        for name, g in grads.items():
            m, v = self._m[name], self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params.tensors[name] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_dataset(task: str, size: int, vocab: int, min_len: int, max_len: int, seed: int) -> list[Pair]:
    """Synthetic copy or reversal pairs over content tokens.

    Raises:
        InputError: If the vocabulary has no content tokens or the task is unknown.
    """
    if vocab <= FIRST_CONTENT_TOKEN:
        raise InputError(f"vocab {vocab} leaves no content tokens above the {FIRST_CONTENT_TOKEN} reserved ids")
    if task not in ("copy", "reverse"):
        raise InputError(f"unknown task {task!r}")
    rng = make_rng(seed)
    pairs: list[Pair] = []
    for _ in range(size):
        length = int(rng.integers(min_len, max_len + 1))
        src = rng.integers(FIRST_CONTENT_TOKEN, vocab, size=length).tolist()
        pairs.append((src, list(src) if task == "copy" else src[::-1]))
    return pairs


@dataclass
class TrainResult:
    """Outcome of toy_train.

    Attributes:
        params: Trained parameters (a copy; the input is untouched).
        losses: Mean batch loss per step.
        checkpoints: Per checkpoint: step and adjacent-layer self-attention JS values.
    """

    params: ModelParams
    losses: list[float] = field(default_factory=list)
    checkpoints: list[tuple[int, list[float]]] = field(default_factory=list)


def _batches(dataset: Sequence[Pair], batch_tokens: int, seed: int):
    rng = make_rng(seed)
    while True:
        batch: list[Pair] = []
        tokens = 0
        for idx in rng.permutation(len(dataset)).tolist():
            batch.append(dataset[idx])
            tokens += len(dataset[idx][1]) + 1
            if tokens >= batch_tokens:
                yield batch
                batch, tokens = [], 0
        if batch:
            yield batch


def toy_train(
    params: ModelParams,
    dataset: Sequence[Pair],
    train_cfg: TrainConfig,
    probe: Callable[[ModelParams], list[float]] | None = None,
) -> TrainResult:
    """Adam training under the inverse-square-root warmup schedule.

    Args:
        params: Initial parameters; copied, never modified.
        dataset: Training pairs.
        train_cfg: Trainer settings.
        probe: Called every ``checkpoint_every`` steps (and at step 0) to record
            adjacent-layer JS values.

    Raises:
        InputError: If the dataset is empty or holds out-of-vocabulary ids.
        TrainingError: If the loss becomes non-finite.
    """
    if not dataset:
        raise InputError("training dataset is empty")
    vocab = params.config.vocab
    for n, (src, tgt) in enumerate(dataset):
        if any(not 0 <= tok < vocab for tok in (*src, *tgt)):
            raise InputError(f"dataset record {n} holds ids outside vocab of {vocab}")

    trained = params.copy()
    result = TrainResult(params=trained)
    if train_cfg.steps == 0:
        return result
    optimizer = AdamOptimizer(trained, train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps)
    batches = _batches(dataset, train_cfg.batch_tokens, train_cfg.seed)
    checkpoint_every = train_cfg.checkpoint_every if probe is not None else 0
    if checkpoint_every and probe is not None:
        result.checkpoints.append((0, probe(trained)))

    logger.info(f"Training {trained.policy.describe()} for {train_cfg.steps} steps on {len(dataset)} pairs")
    for step in range(1, train_cfg.steps + 1):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = loss_and_grads(trained, next(batches), train_cfg.label_smoothing)
                if not math.isfinite(loss):
                    raise TrainingError("loss became non-finite", step, result.losses)
                optimizer.step(trained, grads, lr_at(step, trained.config.d_model, train_cfg.warmup))
        except NumericError as e:
            raise TrainingError(f"training diverged: {e}", step, result.losses) from e
        result.losses.append(loss)
        if step % train_cfg.log_every == 0 or step == train_cfg.steps:
            logger.info(f"  step {step}/{train_cfg.steps} loss={loss:.4f}")
        if checkpoint_every and step % checkpoint_every == 0 and probe is not None:
            result.checkpoints.append((step, probe(trained)))
    return result


@dataclass
class GradCheckResult:
    """Finite-difference comparison per parameter tensor.

    Attributes:
        errors: Tensor name -> largest elementwise relative error over the checked entries.
        worst_name: Tensor with the largest error.
        worst_error: That error.
        tolerance: Pass threshold.
    """

    errors: dict[str, float]
    worst_name: str
    worst_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.worst_error <= self.tolerance


def check_gradients(
    params: ModelParams,
    batch: Sequence[Pair],
    eps: float = 1e-5,
    tolerance: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
    floor: float = 1e-4,
    grad_scale: dict[str, float] | None = None,
) -> GradCheckResult:
    """Compare analytic gradients with central finite differences.

    The error of an entry is |a - n| / max(|a|, |n|, floor); a tensor reports
    the largest one.

    Args:
        params: Model; restored exactly after every perturbation.
        batch: Pairs to evaluate the loss on.
        eps: Finite-difference step.
        tolerance: Pass threshold on the worst relative error.
        max_entries: Entries sampled per tensor; None checks every entry.
        seed: Sampling seed.
        floor: Lower bound on the error denominator, so entries with
            gradients below it are compared in absolute terms.
        grad_scale: Multipliers applied to named analytic gradients, used to
            plant a faulty backward rule.
    """
    _, grads = loss_and_grads(params, batch)
    for name, factor in (grad_scale or {}).items():
        grads[name] = grads[name] * factor
    rng = make_rng(seed)
    errors: dict[str, float] = {}
    for name, tensor in params.tensors.items():
        flat = tensor.reshape(-1)
        picks = np.arange(flat.size) if max_entries is None or flat.size <= max_entries else np.sort(rng.choice(flat.size, max_entries, replace=False))
        numeric = np.empty(picks.size)
        for n, idx in enumerate(picks.tolist()):
            original = flat[idx]
            flat[idx] = original + eps
            plus = batch_loss(params, batch)
            flat[idx] = original - eps
            minus = batch_loss(params, batch)
            flat[idx] = original
            numeric[n] = (plus - minus) / (2 * eps)
        analytic = grads[name].reshape(-1)[picks]
        scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        errors[name] = float(np.max(np.abs(analytic - numeric) / scale))
    worst = max(errors, key=errors.__getitem__)
    logger.info(f"Gradient check over {len(errors)} tensors: worst {worst} = {errors[worst]:.3e}")
    return GradCheckResult(errors=errors, worst_name=worst, worst_error=errors[worst], tolerance=tolerance)
