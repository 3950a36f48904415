"""Test fixtures and reference implementations for san_attn."""

import math

import numpy as np
import pytest

from san_attn.domain.enums import AttentionKind
from san_attn.domain.models import ModelConfig, ModelParams, SharingPolicy
from san_attn.services.divergence import JsMatrix
from san_attn.services.model import build

# Published 6-layer decoder self-attention JS matrix (nats)
SELF_JS_6 = [
    [0.0, 0.5429, 0.5138, 0.4650, 0.5005, 0.5531],
    [0.5429, 0.0, 0.0606, 0.0630, 0.0703, 0.0332],
    [0.5138, 0.0606, 0.0, 0.0671, 0.0472, 0.0296],
    [0.4650, 0.0630, 0.0671, 0.0, 0.0176, 0.0552],
    [0.5005, 0.0703, 0.0472, 0.0176, 0.0, 0.0389],
    [0.5531, 0.0332, 0.0296, 0.0552, 0.0389, 0.0],
]


@pytest.fixture
def self_js_6() -> JsMatrix:
    """6 x 6 decoder self-attention JS matrix with a clear bottom-layer outlier."""
    return JsMatrix(kind=AttentionKind.SELF, values=np.array(SELF_JS_6))


@pytest.fixture
def small_config() -> ModelConfig:
    """Small model: fast enough for exhaustive comparisons."""
    return ModelConfig(enc_layers=2, dec_layers=3, heads=2, d_model=8, d_ff=16, vocab=13, max_len=12)


@pytest.fixture
def six_layer_config() -> ModelConfig:
    """Narrow six-layer decoder for sharing-policy coverage."""
    return ModelConfig(enc_layers=2, dec_layers=6, heads=2, d_model=8, d_ff=16, vocab=11, max_len=10)


@pytest.fixture
def gradcheck_config() -> ModelConfig:
    return ModelConfig(enc_layers=2, dec_layers=2, heads=2, d_model=16, d_ff=32, vocab=11, max_len=8)


@pytest.fixture
def base_config() -> ModelConfig:
    """Base-size shape used for parameter and MAC accounting."""
    return ModelConfig(enc_layers=6, dec_layers=6, heads=8, d_model=512, d_ff=2048, vocab=32000, max_len=256)


def make_params(
    config: ModelConfig,
    self_blocks=None,
    encdec_blocks=None,
    enc_blocks=None,
    seed: int = 0,
) -> ModelParams:
    """Randomly initialized model under a uniform-style policy."""
    return build(config, SharingPolicy.uniform(config, self_blocks, encdec_blocks, enc_blocks), seed)


def oracle_logits(params: ModelParams, src: list[int], tgt_in: list[int]) -> np.ndarray:
    """Loop-based teacher-forced forward pass, one head and one query at a time."""
    config = params.config
    d, h = config.d_model, config.heads
    dk = d // h

    def norm(prefix, x):
        g, b = params[f"{prefix}.g"], params[f"{prefix}.b"]
        out = np.empty_like(x)
        for r in range(x.shape[0]):
            mean = x[r].mean()
            var = ((x[r] - mean) ** 2).mean()
            out[r] = (x[r] - mean) / math.sqrt(var + config.ln_eps) * g + b
        return out

    def position(p):
        row = np.zeros(d)
        for i in range(0, d, 2):
            angle = p / 10000.0 ** (i / d)
            row[i] = math.sin(angle)
            row[i + 1] = math.cos(angle)
        return row

    def embed(ids):
        return np.stack([params["embed"][tok] * math.sqrt(d) + position(p) for p, tok in enumerate(ids)])

    def weights(q, k, causal):
        s = np.zeros((h, q.shape[0], k.shape[0]))
        for head in range(h):
            cols = slice(head * dk, (head + 1) * dk)
            for i in range(q.shape[0]):
                visible = i + 1 if causal else k.shape[0]
                scores = np.array([q[i, cols] @ k[j, cols] / math.sqrt(dk) for j in range(visible)])
                e = np.exp(scores - scores.max())
                s[head, i, :visible] = e / e.sum()
        return s

    def apply(s, v, w_o):
        ctx = np.zeros((s.shape[1], d))
        for head in range(h):
            cols = slice(head * dk, (head + 1) * dk)
            ctx[:, cols] = s[head] @ v[:, cols]
        return ctx @ w_o

    def ffn(prefix, x):
        return np.maximum(x @ params[f"{prefix}.w1"] + params[f"{prefix}.b1"], 0.0) @ params[f"{prefix}.w2"] + params[f"{prefix}.b2"]

    policy = params.policy
    x = embed(src)
    enc_s = {}
    for i, bottom in enumerate(policy.bottoms(AttentionKind.ENC)):
        a = norm(f"enc.{i}.ln1", x)
        if bottom == i:
            enc_s[i] = weights(a @ params[f"enc.{i}.self.w_q"], a @ params[f"enc.{i}.self.w_k"], causal=False)
        x = x + apply(enc_s[bottom], a @ params[f"enc.{i}.self.w_v"], params[f"enc.{i}.self.w_o"])
        x = x + ffn(f"enc.{i}.ffn", norm(f"enc.{i}.ln2", x))
    memory = norm("enc.ln_f", x)

    y = embed(tgt_in)
    self_s, cross_a = {}, {}
    cross_bottoms = policy.bottoms(AttentionKind.ENCDEC)
    for i, bottom in enumerate(policy.bottoms(AttentionKind.SELF)):
        a = norm(f"dec.{i}.ln1", y)
        if bottom == i:
            self_s[i] = weights(a @ params[f"dec.{i}.self.w_q"], a @ params[f"dec.{i}.self.w_k"], causal=True)
        y = y + apply(self_s[bottom], a @ params[f"dec.{i}.self.w_v"], params[f"dec.{i}.self.w_o"])
        if cross_bottoms[i] == i:
            c = norm(f"dec.{i}.ln2", y)
            s = weights(c @ params[f"dec.{i}.cross.w_q"], memory @ params[f"dec.{i}.cross.w_k"], causal=False)
            cross_a[i] = apply(s, memory @ params[f"dec.{i}.cross.w_v"], params[f"dec.{i}.cross.w_o"])
        y = y + cross_a[cross_bottoms[i]]
        y = y + ffn(f"dec.{i}.ffn", norm(f"dec.{i}.ln3", y))
    return norm("dec.ln_f", y) @ params["out_proj"]
