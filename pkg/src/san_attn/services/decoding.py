"""Greedy and beam-search decoding loops over cached decode sessions."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax

from san_attn.domain.enums import SpecialToken
from san_attn.domain.errors import ConfigurationError
from san_attn.domain.models import ModelParams
from san_attn.services.model import DecodeSession

logger = logging.getLogger(__name__)

BOS = int(SpecialToken.BOS)
EOS = int(SpecialToken.EOS)


def _horizon(params: ModelParams, max_len: int | None) -> int:
    limit = params.config.max_len if max_len is None else max_len
    if limit < 1:
        raise ConfigurationError(f"max_len must be >= 1, got {limit}")
    return min(limit, params.config.max_len)


def greedy_decode(params: ModelParams, src: list[int] | np.ndarray, max_len: int | None = None, stop_at_eos: bool = True) -> list[int]:
    """Arg-max decoding until EOS or max_len tokens.

    Returns:
        Generated ids without BOS; a trailing EOS is included.
    """
    return _greedy(params, src, _horizon(params, max_len), stop_at_eos).tokens


@dataclass
class Hypothesis:
    """One beam entry with its own cache.

    Attributes:
        tokens: Generated ids without BOS.
        logprob: Sum of token log-probabilities.
        session: Decode state after feeding all but the last token; None once finished.
    """

    tokens: list[int]
    logprob: float
    session: DecodeSession | None = None

    @property
    def score(self) -> float:
        """Length-normalized log-probability."""
        return self.logprob / len(self.tokens)


def _greedy(params: ModelParams, src: list[int] | np.ndarray, horizon: int, stop_at_eos: bool) -> Hypothesis:
    session = DecodeSession(params, src)
    token, logprob = BOS, 0.0
    out: list[int] = []
    for _ in range(horizon):
        logits = session.decode_step(token)
        token = int(np.argmax(logits))
        logprob += float(log_softmax(logits)[token])
        out.append(token)
        if stop_at_eos and token == EOS:
            break
    return Hypothesis(out, logprob)


def beam_search(
    params: ModelParams,
    src: list[int] | np.ndarray,
    beam: int,
    max_len: int | None = None,
    stop_at_eos: bool = True,
) -> list[Hypothesis]:
    """Length-normalized beam search.

    At each step the best ``beam`` expansions are kept; those ending in EOS are
    finished. Expansion continues until the horizon or until nothing is alive.
    At the last permitted step every expansion counts as finished, so the final
    choice is exact over the surviving prefixes. For beam > 1 the greedy
    hypothesis is also a candidate, so the best score never falls below greedy.

    Returns:
        Finished hypotheses, best first (ties keep discovery order).

    Raises:
        ConfigurationError: If beam < 1.
    """
    if beam < 1:
        raise ConfigurationError(f"beam must be >= 1, got {beam}")
    horizon = _horizon(params, max_len)
    alive = [Hypothesis([], 0.0, DecodeSession(params, src))]
    finished: list[Hypothesis] = []

    for step in range(1, horizon + 1):
        expansions: list[tuple[float, int, int]] = []
        for rank, hyp in enumerate(alive):
            assert hyp.session is not None
            logp = log_softmax(hyp.session.decode_step(hyp.tokens[-1] if hyp.tokens else BOS))
            if step == horizon:
                best = int(np.argmax(logp))
                finished.append(Hypothesis(hyp.tokens + [best], hyp.logprob + float(logp[best])))
                continue
            top = np.argsort(-logp, kind="stable")[:beam]
            expansions.extend((hyp.logprob + float(logp[tok]), rank, int(tok)) for tok in top)
        if step == horizon:
            break

        expansions.sort(key=lambda e: -e[0])
        next_alive: list[Hypothesis] = []
        for logprob, rank, tok in expansions[:beam]:
            parent = alive[rank]
            if stop_at_eos and tok == EOS:
                finished.append(Hypothesis(parent.tokens + [tok], logprob))
            else:
                assert parent.session is not None
                next_alive.append(Hypothesis(parent.tokens + [tok], logprob, parent.session.fork()))
        alive = next_alive
        if not alive:
            break

    if beam > 1:
        finished.append(_greedy(params, src, horizon, stop_at_eos))
    order = sorted(range(len(finished)), key=lambda i: (-finished[i].score, i))
    return [finished[i] for i in order]


def beam_decode(params: ModelParams, src: list[int] | np.ndarray, beam: int, max_len: int | None = None, stop_at_eos: bool = True) -> list[int]:
    """Best hypothesis of beam_search."""
    return beam_search(params, src, beam, max_len, stop_at_eos)[0].tokens


def sequence_logprob(params: ModelParams, src: list[int] | np.ndarray, tokens: list[int]) -> float:
    """Log-probability of a generated sequence under the model, for scoring comparisons."""
    session = DecodeSession(params, src)
    prev, total = BOS, 0.0
    for tok in tokens:
        total += float(log_softmax(session.decode_step(prev))[tok])
        prev = tok
    return total
