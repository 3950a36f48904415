"""Command-line interface for san_attn using Hydra.

Usage:
    san-attn command=<name> [hydra_overrides...]

Commands (via command= override):
    command=analyze    Layer-pair JS matrix of a model over a corpus
    command=policy     Sharing policy from JS matrices or from model+corpus
    command=bench      Decoding speed of policy variants against the baseline
    command=train-toy  LearnToShare on a synthetic task
    command=gradcheck  Analytic gradients against finite differences
    command=params     Parameter counts and savings of a policy (default)
    command=decode     Greedy or beam decoding of a corpus

Examples:
    san-attn command=params model=base policy.blocks.self=[6]
    san-attn command=policy paths.matrix=fig2a.csv policy.theta_self=0.35
    san-attn command=bench model=bench bench.beams=[4,8,12,16,20]
    san-attn command=train-toy seed=3 paths.out=runs/copy
"""

from __future__ import annotations

import functools
import logging
import sys
from collections.abc import Callable
from dataclasses import asdict
from pathlib import Path
from typing import Any

import hydra
from omegaconf import DictConfig, ListConfig, OmegaConf
from omegaconf.errors import OmegaConfBaseException

from san_attn.application.bench import BenchConfig, BenchRunner
from san_attn.application.learn_to_share import LearnToShareResult, learn_to_share
from san_attn.data_access.corpus import read_corpus, write_decodes
from san_attn.data_access.reports import (
    read_js_matrix,
    read_policy,
    write_bench_records_csv,
    write_js_curve,
    write_js_matrix_csv,
    write_js_matrix_json,
    write_json_report,
    write_loss_curve,
    write_policy,
)
from san_attn.data_access.weights import load_weights, save_weights
from san_attn.domain.enums import AttentionKind
from san_attn.domain.errors import (
    ConfigurationError,
    FormatError,
    InputError,
    RangeError,
    SanError,
    TrainingError,
)
from san_attn.domain.models import ModelConfig, ModelParams, PolicyConfig, SharingPolicy, TrainConfig
from san_attn.services.accounting import count_params, layer_savings, projection_savings
from san_attn.services.analysis import layer_js
from san_attn.services.decoding import beam_decode, greedy_decode
from san_attn.services.divergence import mu_matrix
from san_attn.services.model import build
from san_attn.services.policy import derive_policy, find_policy
from san_attn.services.training import check_gradients, make_dataset

EXIT_SUCCESS, EXIT_ERROR, EXIT_USAGE, EXIT_INPUT = 0, 1, 2, 3
logger = logging.getLogger(__name__)

# Calculate absolute config path at module load time
_CONFIG_PATH = str(Path(__file__).resolve().parent.parent.parent / "configs")


def _exit_codes(label: str) -> Callable[[Callable[[DictConfig], int]], Callable[[DictConfig], int]]:
    """Map library errors raised by a command onto the exit-code contract."""

    def wrap(fn: Callable[[DictConfig], int]) -> Callable[[DictConfig], int]:
        @functools.wraps(fn)
        def run(cfg: DictConfig) -> int:
            try:
                return fn(cfg)
            except (FormatError, InputError) as e:
                logger.exception(f"{label} input error: {e}")
                print(f"\n{label}: FAILED (input) - {e}\n")
                return EXIT_INPUT
            except (ConfigurationError, RangeError, OmegaConfBaseException) as e:
                logger.exception(f"{label} usage error: {e}")
                print(f"\n{label}: FAILED (usage) - {e}\n")
                return EXIT_USAGE
            except SanError as e:
                logger.exception(f"{label} failed: {e}")
                print(f"\n{label}: FAILED - {e}\n")
                return EXIT_ERROR

        return run

    return wrap


def _container(node: Any) -> Any:
    return OmegaConf.to_container(node, resolve=True) if isinstance(node, (DictConfig, ListConfig)) else node


def model_config(cfg: DictConfig) -> ModelConfig:
    return ModelConfig.from_dict(_container(cfg.model))


def policy_config(cfg: DictConfig) -> PolicyConfig:
    node = _container(cfg.policy)
    return PolicyConfig(
        theta_self=node["theta_self"],
        theta_encdec=node["theta_encdec"],
        theta_enc=node.get("theta_enc"),
        sample_sentences=node["sample_sentences"],
        search=node["search"],
    )


def train_config(cfg: DictConfig) -> TrainConfig:
    node = _container(cfg.train)
    known = set(TrainConfig.__dataclass_fields__)
    return TrainConfig(**{k: v for k, v in node.items() if k in known} | {"seed": int(cfg.seed)})


def bench_config(cfg: DictConfig) -> BenchConfig:
    node = _container(cfg.bench)
    known = set(BenchConfig.__dataclass_fields__)
    return BenchConfig(**{k: v for k, v in node.items() if k in known} | {"seed": int(cfg.seed)})


def _blocks_policy(model_cfg: ModelConfig, node: Any) -> SharingPolicy:
    blocks = _container(node) or {}
    return SharingPolicy.uniform(model_cfg, blocks.get("self"), blocks.get("encdec"), blocks.get("enc"))


def _out_dir(cfg: DictConfig) -> Path:
    out = Path(cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(cfg: DictConfig, key: str) -> str:
    value = cfg.paths.get(key)
    if not value:
        raise ConfigurationError(f"paths.{key} is required for command={cfg.command}")
    return str(value)


def _load_model(cfg: DictConfig) -> ModelParams:
    return load_weights(_require(cfg, "model"))


def _load_corpus(cfg: DictConfig, params: ModelParams) -> list[tuple[list[int], list[int] | None]]:
    return read_corpus(_require(cfg, "corpus"), params.config.vocab).require()


def print_policy(policy: SharingPolicy) -> None:
    """Print block structure summary."""
    print(f"\n{'=' * 50}\nPolicy: {policy.describe()}")
    for kind in AttentionKind:
        groups, start = [], 1
        for size in policy.blocks(kind):
            groups.append(f"{start}" if size == 1 else f"{start}-{start + size - 1}")
            start += size
        print(f"  {kind.value:<7} blocks: {', '.join(groups)}")
    print("=" * 50 + "\n")


@_exit_codes("Analyze")
def run_analyze(cfg: DictConfig) -> int:
    """Write the JS matrix of one attention kind as CSV and JSON."""
    params = _load_model(cfg)
    records = _load_corpus(cfg, params)
    kind = AttentionKind(cfg.kind)
    js = layer_js(params, records, kind)
    out = _out_dir(cfg)
    csv_path = write_js_matrix_csv(js, out / f"js_{kind.value}.csv")
    json_path = write_js_matrix_json(js, out / f"js_{kind.value}.json")
    print(f"\nAnalyze: SUCCESS - {js.layers}x{js.layers} {kind.value} matrix over {len(records)} sentences -> {csv_path}, {json_path}\n")
    return EXIT_SUCCESS


@_exit_codes("Policy")
def run_policy(cfg: DictConfig) -> int:
    """Derive a policy from JS matrix files, or from a model and corpus."""
    policy_cfg = policy_config(cfg)
    if cfg.paths.get("matrix"):
        self_js = read_js_matrix(cfg.paths.matrix, AttentionKind.SELF)
        self_blocks = find_policy(mu_matrix(self_js), policy_cfg.theta_self, policy_cfg.search)
        if cfg.paths.get("matrix_encdec"):
            encdec_js = read_js_matrix(cfg.paths.matrix_encdec, AttentionKind.ENCDEC)
            encdec_blocks = find_policy(mu_matrix(encdec_js), policy_cfg.theta_encdec, policy_cfg.search)
        else:
            encdec_blocks = (1,) * self_js.layers
        policy = SharingPolicy(self_blocks, encdec_blocks, (1,) * int(cfg.model.enc_layers))
    else:
        params = _load_model(cfg)
        policy = derive_policy(params, _load_corpus(cfg, params), policy_cfg)
    path = write_policy(policy, _out_dir(cfg) / "policy.json", policy_cfg.theta_self, policy_cfg.theta_encdec)
    print_policy(policy)
    print(f"Policy written to {path}")
    return EXIT_SUCCESS


def _bench_policies(cfg: DictConfig, model_cfg: ModelConfig) -> list[tuple[str, SharingPolicy]]:
    policies = [(name, _blocks_policy(model_cfg, blocks)) for name, blocks in (_container(cfg.bench.get("variants")) or {}).items()]
    files = _container(cfg.paths.get("policy")) or []
    for file in [files] if isinstance(files, str) else files:
        policies.append((Path(file).stem, read_policy(file)))
    return policies


@_exit_codes("Bench")
def run_bench(cfg: DictConfig) -> int:
    """Time every policy variant and write the report as JSON and CSV."""
    loaded = load_weights(cfg.paths.model) if cfg.paths.get("model") else None
    model_cfg = loaded.config if loaded is not None else model_config(cfg)
    runner = BenchRunner(model_cfg, bench_config(cfg))
    report = runner.run(runner.variants(_bench_policies(cfg, model_cfg), loaded))
    out = _out_dir(cfg)
    write_json_report(report.to_dict(), out / "bench.json")
    write_bench_records_csv([asdict(r) for r in report.records], out / "bench.csv")

    print(f"\n{'=' * 50}\nBench: SUCCESS")
    for rec in report.records:
        ratio = report.speedups[f"{rec.policy_id}@beam{rec.beam}"]
        print(f"  {rec.policy_id:<12} beam={rec.beam:<3} {rec.tokens_per_sec:10.1f} tok/s  x{ratio:.2f}  {rec.flops_per_token:.0f} MACs/token")
    print("=" * 50 + "\n")
    return EXIT_SUCCESS


def _write_training_outputs(result: LearnToShareResult, out: Path, policy_cfg: PolicyConfig) -> None:
    last = result.iterations[-1]
    save_weights(result.params, out / "model.sanw")
    write_policy(result.policy, out / "policy.json", policy_cfg.theta_self, policy_cfg.theta_encdec)
    write_loss_curve(last.losses, out / "loss.csv")
    write_js_curve(last.js_checkpoints, result.params.config.dec_layers, out / "js_curve.csv")
    write_json_report(
        {
            "converged": result.converged,
            "policy": result.policy.to_dict(),
            "trained_policy": result.trained_policy.to_dict(),
            "iterations": [
                {
                    "iteration": r.iteration,
                    "trained_policy": r.trained_policy.to_dict(),
                    "derived_policy": r.derived_policy.to_dict(),
                    "final_loss": r.final_loss,
                }
                for r in result.iterations
            ],
        },
        out / "iterations.json",
    )


@_exit_codes("Train")
def run_train_toy(cfg: DictConfig) -> int:
    """Run LearnToShare on a synthetic task and write model, policy and curves."""
    model_cfg, policy_cfg, train_cfg = model_config(cfg), policy_config(cfg), train_config(cfg)
    dataset = make_dataset(train_cfg.task, train_cfg.dataset_size, model_cfg.vocab, train_cfg.min_len, train_cfg.max_sentence_len, train_cfg.seed)
    held_out = make_dataset(train_cfg.task, policy_cfg.sample_sentences, model_cfg.vocab, train_cfg.min_len, train_cfg.max_sentence_len, train_cfg.seed + 1)
    out = _out_dir(cfg)
    try:
        result = learn_to_share(dataset, model_cfg, policy_cfg, train_cfg, int(cfg.train.max_outer), held_out)
    except TrainingError as e:
        write_loss_curve(e.losses, out / "loss.csv")
        raise
    _write_training_outputs(result, out, policy_cfg)
    print_policy(result.policy)
    status = "converged" if result.converged else "stopped at max_outer"
    print(f"Train: SUCCESS - {status} after {len(result.iterations)} iterations, final loss {result.iterations[-1].final_loss}\n")
    return EXIT_SUCCESS


@_exit_codes("Gradcheck")
def run_gradcheck(cfg: DictConfig) -> int:
    """Exit 0 iff the worst relative gradient error is within tolerance."""
    model_cfg = model_config(cfg)
    gc = cfg.gradcheck
    params = build(model_cfg, _blocks_policy(model_cfg, gc.policy), int(cfg.seed))
    batch = make_dataset("copy", int(gc.sentences), model_cfg.vocab, int(gc.min_len), int(gc.max_len), int(cfg.seed))
    grad_scale = {str(gc.corrupt_param): float(gc.corrupt_scale)} if gc.get("corrupt_param") else None
    result = check_gradients(
        params,
        batch,
        eps=float(gc.eps),
        tolerance=float(gc.tolerance),
        max_entries=gc.max_entries,
        floor=float(gc.floor),
        seed=int(cfg.seed),
        grad_scale=grad_scale,
    )
    status = "PASSED" if result.passed else "FAILED"
    print(f"\nGradcheck: {status} - worst {result.worst_name} relative error {result.worst_error:.3e} (tolerance {result.tolerance:.1e})\n")
    return EXIT_SUCCESS if result.passed else EXIT_ERROR


@_exit_codes("Params")
def run_params(cfg: DictConfig) -> int:
    """Print baseline and policy parameter counts and write them as JSON."""
    model_cfg = model_config(cfg)
    policy = read_policy(cfg.paths.policy) if cfg.paths.get("policy") else _blocks_policy(model_cfg, cfg.policy.blocks)
    baseline = count_params(model_cfg, SharingPolicy.baseline(model_cfg.enc_layers, model_cfg.dec_layers))
    shared = count_params(model_cfg, policy)
    savings = baseline - shared
    per_kind = {kind.value: n for kind, n in layer_savings(model_cfg, policy).items()}
    projections = {kind.value: n for kind, n in projection_savings(model_cfg, policy).items()}
    doc = {
        "policy": policy.to_dict(),
        "baseline_params": baseline,
        "policy_params": shared,
        "savings": savings,
        "savings_pct": 100.0 * savings / baseline,
        "savings_by_kind": per_kind,
        "projection_savings_by_kind": projections,
    }
    write_json_report(doc, _out_dir(cfg) / "params.json")

    print(f"\n{'=' * 50}\nParams: {policy.describe()}")
    print(f"  Baseline: {baseline:>14,}")
    print(f"  Policy:   {shared:>14,}")
    print(f"  Savings:  {savings:>14,} ({doc['savings_pct']:.2f}%)")
    for kind, n in per_kind.items():
        print(f"    {kind:<7} {n:>12,}  (projections {projections[kind]:,})")
    print("=" * 50 + "\n")
    return EXIT_SUCCESS


@_exit_codes("Decode")
def run_decode(cfg: DictConfig) -> int:
    """Decode every corpus source and write {"src", "hyp"} JSONL."""
    params = _load_model(cfg)
    records = _load_corpus(cfg, params)
    beam, max_len = int(cfg.decode.beam), cfg.decode.get("max_len")
    results = []
    for src, _ in records:
        hyp = greedy_decode(params, src, max_len) if beam == 1 else beam_decode(params, src, beam, max_len)
        results.append((src, hyp))
    path = write_decodes(results, _out_dir(cfg) / "decodes.jsonl")
    print(f"\nDecode: SUCCESS - {len(results)} sentences (beam={beam}) -> {path}\n")
    return EXIT_SUCCESS


COMMANDS: dict[str, Callable[[DictConfig], int]] = {
    "analyze": run_analyze,
    "policy": run_policy,
    "bench": run_bench,
    "train-toy": run_train_toy,
    "gradcheck": run_gradcheck,
    "params": run_params,
    "decode": run_decode,
}


def dispatch(cfg: DictConfig) -> int:
    """Run the selected command and return its exit code."""
    command = cfg.get("command", "params")
    logger.info(f"Running: {command}")
    handler = COMMANDS.get(command)
    if handler is None:
        print(f"Error: Unknown command: {command} (expected one of {', '.join(COMMANDS)})")
        return EXIT_USAGE
    return handler(cfg)


@hydra.main(config_path=_CONFIG_PATH, config_name="config", version_base=None)
def main(cfg: DictConfig) -> None:
    """CLI entry point."""
    code = dispatch(cfg)
    if code != EXIT_SUCCESS:
        sys.exit(code)


if __name__ == "__main__":
    main()
