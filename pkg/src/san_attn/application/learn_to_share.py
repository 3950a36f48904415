"""LearnToShare loop: train under a policy, re-measure layer similarity, re-derive the policy."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from datetime import UTC, datetime

from san_attn.domain.errors import ConfigurationError, InputError
from san_attn.domain.models import ModelConfig, ModelParams, PolicyConfig, SharingPolicy, TrainConfig
from san_attn.services.analysis import adjacent_layer_js
from san_attn.services.model import build
from san_attn.services.policy import derive_policy
from san_attn.services.training import Pair, toy_train

logger = logging.getLogger(__name__)


def _utc_now() -> datetime:
    """Return current UTC datetime."""
    return datetime.now(UTC)


@dataclass
class IterationRecord:
    """One outer iteration.

    Attributes:
        iteration: 1-based outer iteration.
        trained_policy: Policy the model was trained under.
        derived_policy: Policy derived from the trained model.
        losses: Per-step training loss.
        js_checkpoints: (step, adjacent-layer JS values) pairs.
    """

    iteration: int
    trained_policy: SharingPolicy
    derived_policy: SharingPolicy
    losses: list[float] = field(default_factory=list)
    js_checkpoints: list[tuple[int, list[float]]] = field(default_factory=list)

    @property
    def final_loss(self) -> float | None:
        return self.losses[-1] if self.losses else None


@dataclass
class LearnToShareResult:
    """Outcome of learn_to_share.

    Attributes:
        policy: Final derived policy.
        params: Parameters from the last training pass.
        trained_policy: Policy those parameters were trained under.
        converged: True if the derived policy repeated before max_outer was reached.
        iterations: Per-iteration log.
    """

    policy: SharingPolicy
    params: ModelParams
    trained_policy: SharingPolicy
    converged: bool
    started_at: datetime
    completed_at: datetime
    iterations: list[IterationRecord] = field(default_factory=list)


class LearnToSharePipeline:
    """Alternates toy training and policy search until the policy is a fixed point.

    Each outer iteration restarts from a fresh initialization because parameter
    shapes change with the policy.

    Args:
        model_cfg: Model shape.
        policy_cfg: Thresholds, search mode and held-out sample size.
        train_cfg: Trainer settings; its seed also seeds initialization.
    """

    def __init__(self, model_cfg: ModelConfig, policy_cfg: PolicyConfig, train_cfg: TrainConfig) -> None:
        self._model_cfg = model_cfg
        self._policy_cfg = policy_cfg
        self._train_cfg = train_cfg
        logger.info(f"LearnToSharePipeline initialized (theta_self={policy_cfg.theta_self}, theta_encdec={policy_cfg.theta_encdec}, theta_enc={policy_cfg.theta_enc})")

    def _split(self, dataset: Sequence[Pair], held_out: Sequence[Pair] | None) -> tuple[Sequence[Pair], Sequence[Pair]]:
        if held_out is not None:
            return dataset, held_out[: self._policy_cfg.sample_sentences]
        n = self._policy_cfg.sample_sentences
        if len(dataset) <= n:
            raise InputError(f"dataset of {len(dataset)} pairs cannot spare {n} held-out sentences")
        return dataset[:-n], dataset[-n:]

    def _run_iteration(self, iteration: int, policy: SharingPolicy, train: Sequence[Pair], held_out: Sequence[Pair]) -> tuple[IterationRecord, ModelParams]:
        logger.info(f"=== Iteration {iteration}: training under {policy.describe()} ===")
        params = build(self._model_cfg, policy, self._train_cfg.seed)
        result = toy_train(params, train, self._train_cfg, probe=lambda p: adjacent_layer_js(p, held_out))
        derived = derive_policy(result.params, held_out, self._policy_cfg)
        record = IterationRecord(
            iteration=iteration,
            trained_policy=policy,
            derived_policy=derived,
            losses=result.losses,
            js_checkpoints=result.checkpoints,
        )
        logger.info(f"  Iteration {iteration}: final loss {record.final_loss}, derived {derived.describe()}")
        return record, result.params

    def run(self, dataset: Sequence[Pair], max_outer: int, held_out: Sequence[Pair] | None = None) -> LearnToShareResult:
        """Run outer iterations until two consecutive derived policies agree.

        Args:
            dataset: Training pairs.
            max_outer: Cap on outer iterations.
            held_out: Sentences for weight estimation; by default the last
                ``sample_sentences`` pairs of dataset are held out.

        Raises:
            ConfigurationError: If max_outer < 1.
            InputError: If no held-out sentences can be formed.
            TrainingError: If training diverges.
        """
        if max_outer < 1:
            raise ConfigurationError(f"max_outer must be >= 1, got {max_outer}")
        started_at = _utc_now()
        train, probe = self._split(dataset, held_out)
        policy = SharingPolicy.baseline(self._model_cfg.enc_layers, self._model_cfg.dec_layers)
        iterations: list[IterationRecord] = []
        params: ModelParams | None = None
        converged = False

        for k in range(1, max_outer + 1):
            record, params = self._run_iteration(k, policy, train, probe)
            iterations.append(record)
            if k > 1 and record.derived_policy == policy:
                converged = True
                break
            policy = record.derived_policy

        assert params is not None
        last = iterations[-1]
        completed_at = _utc_now()
        status = "converged" if converged else "stopped at max_outer"
        logger.info(f"LearnToShare {status} after {len(iterations)} iterations in {(completed_at - started_at).total_seconds():.2f}s: {last.derived_policy.describe()}")
        return LearnToShareResult(
            policy=last.derived_policy,
            params=params,
            trained_policy=last.trained_policy,
            converged=converged,
            started_at=started_at,
            completed_at=completed_at,
            iterations=iterations,
        )


def learn_to_share(
    dataset: Sequence[Pair],
    model_cfg: ModelConfig,
    policy_cfg: PolicyConfig,
    train_cfg: TrainConfig,
    max_outer: int,
    held_out: Sequence[Pair] | None = None,
) -> LearnToShareResult:
    """Functional entry point for LearnToSharePipeline.run."""
    return LearnToSharePipeline(model_cfg, policy_cfg, train_cfg).run(dataset, max_outer, held_out)
