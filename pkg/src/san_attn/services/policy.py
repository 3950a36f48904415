"""Greedy search for a layer-sharing policy from layer similarities."""

from __future__ import annotations

import logging
from collections.abc import Sequence

from san_attn.domain.enums import AttentionKind, SearchMode
from san_attn.domain.errors import RangeError
from san_attn.domain.models import LN2, ModelParams, PolicyConfig, SharingPolicy
from san_attn.services.analysis import Record, collect_weights
from san_attn.services.divergence import MuMatrix, block_sim, js_matrix, mu_matrix

logger = logging.getLogger(__name__)


def _admissible(mu: MuMatrix, m: int, n: int, theta: float, search: SearchMode) -> bool:
    if search is SearchMode.OUTERMOST:
        return block_sim(mu, m, n) >= theta
    return all(block_sim(mu, m, k) >= theta for k in range(m + 1, n + 1))


def find_policy(mu: MuMatrix, theta: float, search: SearchMode | str = SearchMode.NESTED) -> tuple[int, ...]:
    """Partition layers 1..M into blocks, bottom-up, taking the biggest admissible block each time.

    For each start layer m the candidate end n is tried from M downward and the
    first admissible one wins; a size-1 block is always admissible. Under
    ``nested`` search a block b(m, n) is admissible when every leading sub-block
    b(m, k), m < k <= n, has sim >= theta; under ``outermost`` only b(m, n)
    itself is tested.

    Raises:
        RangeError: If theta is outside (0, ln 2].
    """
    if not 0.0 < theta <= LN2:
        raise RangeError(f"theta must lie in (0, ln 2], got {theta}")
    mode = SearchMode(search)
    layers = mu.layers
    blocks: list[int] = []
    m = 1
    while m <= layers:
        end = next((n for n in range(layers, m, -1) if _admissible(mu, m, n, theta, mode)), m)
        blocks.append(end - m + 1)
        m = end + 1
    logger.debug(f"find_policy(theta={theta}, search={mode.value}) -> {blocks}")
    return tuple(blocks)


def derive_policy(params: ModelParams, records: Sequence[Record], policy_cfg: PolicyConfig) -> SharingPolicy:
    """Measure layer similarities on held-out records and search a policy per attention kind.

    The encoder stays unshared unless ``theta_enc`` is set.
    """
    weights = collect_weights(params, records)
    blocks: dict[AttentionKind, tuple[int, ...]] = {}
    for kind in AttentionKind:
        theta = policy_cfg.theta(kind)
        if theta is None:
            blocks[kind] = (1,) * params.config.layers(kind)
            continue
        mu = mu_matrix(js_matrix(weights[kind], kind))
        blocks[kind] = find_policy(mu, theta, policy_cfg.search)
    policy = SharingPolicy(blocks[AttentionKind.SELF], blocks[AttentionKind.ENCDEC], blocks[AttentionKind.ENC])
    logger.info(f"Derived policy {policy.describe()} from {len(records)} sentences")
    return policy
