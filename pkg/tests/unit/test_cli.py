"""Tests for CLI module using Hydra."""

import json
from pathlib import Path

import numpy as np
import polars as pl
import pytest
from hydra import compose, initialize_config_dir
from omegaconf import DictConfig, OmegaConf

from san_attn.cli import (
    _CONFIG_PATH,
    EXIT_ERROR,
    EXIT_INPUT,
    EXIT_SUCCESS,
    EXIT_USAGE,
    dispatch,
    print_policy,
    run_analyze,
    run_bench,
    run_decode,
    run_gradcheck,
    run_params,
    run_policy,
    run_train_toy,
)
from san_attn.data_access.corpus import write_corpus
from san_attn.data_access.weights import load_weights, save_weights
from san_attn.domain.enums import AttentionKind
from san_attn.domain.models import ModelConfig, SharingPolicy
from san_attn.services import training
from san_attn.services.analysis import layer_js
from san_attn.services.model import build
from tests.conftest import SELF_JS_6

CORPUS = [([3, 4, 5], [5, 4, 3]), ([6, 7, 8, 9], [9, 8]), ([10, 11], None)]


@pytest.fixture
def make_cfg(tmp_path: Path):
    """Compose the real config tree with overrides; outputs go to tmp_path."""

    def _make(*overrides: str) -> DictConfig:
        with initialize_config_dir(config_dir=_CONFIG_PATH, version_base=None):
            return compose(config_name="config", overrides=[f"paths.out='{tmp_path}'", *overrides])

    return _make


@pytest.fixture
def toy_files(tmp_path: Path, make_cfg) -> tuple[Path, Path]:
    """Saved toy model and a small corpus."""
    model_cfg = ModelConfig.from_dict(OmegaConf.to_container(make_cfg().model))
    params = build(model_cfg, SharingPolicy.uniform(model_cfg, self_blocks=[2]), 3)
    return save_weights(params, tmp_path / "model.sanw"), write_corpus(CORPUS, tmp_path / "corpus.jsonl")


class TestPrintPolicy:
    """Tests for print_policy."""

    def test_block_ranges(self, capsys) -> None:
        print_policy(SharingPolicy((1, 5), (3, 3), (1, 1)))

        out = capsys.readouterr().out
        assert "self{1,5} encdec{3,3} enc{1,1}" in out
        assert "1, 2-6" in out
        assert "1-3, 4-6" in out


class TestRunParams:
    """Tests for command=params."""

    def test_base_size_self_sharing(self, make_cfg, tmp_path: Path, capsys) -> None:
        code = run_params(make_cfg("command=params", "model=base", "policy.blocks.self=[6]"))

        assert code == EXIT_SUCCESS
        doc = json.loads((tmp_path / "params.json").read_text(encoding="utf-8"))
        assert doc["savings"] == 2_621_440
        assert doc["savings_by_kind"]["self"] == 2_621_440
        assert "2,621,440" in capsys.readouterr().out

    def test_policy_file(self, make_cfg, tmp_path: Path) -> None:
        policy_path = tmp_path / "p.json"
        policy_path.write_text(json.dumps({"self": [6], "encdec": [3, 3], "enc": [1] * 6}), encoding="utf-8")

        assert run_params(make_cfg("model=base", f"paths.policy='{policy_path}'")) == EXIT_SUCCESS
        doc = json.loads((tmp_path / "params.json").read_text(encoding="utf-8"))
        assert doc["savings"] == 2_621_440 + 4_194_304 + 4 * 2 * 512
        assert doc["projection_savings_by_kind"] == {"self": 2_621_440, "encdec": 4_194_304, "enc": 0}

    def test_partition_mismatch(self, make_cfg) -> None:
        assert run_params(make_cfg("model=base", "policy.blocks.self=[2,2]")) == EXIT_USAGE


class TestRunPolicy:
    """Tests for command=policy."""

    @pytest.fixture
    def matrix_csv(self, tmp_path: Path) -> Path:
        path = tmp_path / "fig.csv"
        path.write_text("".join(",".join(f"{v:.6f}" for v in row) + "\n" for row in SELF_JS_6), encoding="utf-8")
        return path

    def test_from_matrix(self, make_cfg, matrix_csv: Path, tmp_path: Path) -> None:
        code = run_policy(make_cfg("command=policy", "model=base", f"paths.matrix='{matrix_csv}'", "policy.theta_self=0.35"))

        assert code == EXIT_SUCCESS
        doc = json.loads((tmp_path / "policy.json").read_text(encoding="utf-8"))
        assert doc["self"] == [1, 5]
        assert doc["encdec"] == [1] * 6
        assert doc["theta_self"] == 0.35

    def test_outermost_search(self, make_cfg, matrix_csv: Path, tmp_path: Path) -> None:
        run_policy(make_cfg("model=base", f"paths.matrix='{matrix_csv}'", "policy.search=outermost"))

        assert json.loads((tmp_path / "policy.json").read_text(encoding="utf-8"))["self"] == [6]

    def test_theta_out_of_range(self, make_cfg, matrix_csv: Path) -> None:
        assert run_policy(make_cfg("model=base", f"paths.matrix='{matrix_csv}'", "policy.theta_self=0.9")) == EXIT_USAGE

    def test_malformed_matrix(self, make_cfg, tmp_path: Path) -> None:
        bad = tmp_path / "bad.csv"
        bad.write_text("0.0,0.1\n0.2,0.0\n", encoding="utf-8")

        assert run_policy(make_cfg(f"paths.matrix='{bad}'")) == EXIT_INPUT

    def test_from_model_and_corpus(self, make_cfg, toy_files, tmp_path: Path) -> None:
        model, corpus = toy_files

        code = run_policy(make_cfg(f"paths.model='{model}'", f"paths.corpus='{corpus}'"))

        assert code == EXIT_SUCCESS
        doc = json.loads((tmp_path / "policy.json").read_text(encoding="utf-8"))
        assert sum(doc["self"]) == 2 and doc["enc"] == [1, 1]


class TestRunAnalyze:
    """Tests for command=analyze."""

    def test_writes_matrix_files(self, make_cfg, toy_files, tmp_path: Path) -> None:
        model, corpus = toy_files

        code = run_analyze(make_cfg("command=analyze", "kind=encdec", f"paths.model='{model}'", f"paths.corpus='{corpus}'"))

        assert code == EXIT_SUCCESS
        doc = json.loads((tmp_path / "js_encdec.json").read_text(encoding="utf-8"))
        expected = layer_js(load_weights(model), CORPUS, AttentionKind.ENCDEC)
        np.testing.assert_array_equal(np.array(doc["values"]), expected.values)
        assert (tmp_path / "js_encdec.csv").exists()

    def test_shared_self_layers_are_identical(self, make_cfg, toy_files, tmp_path: Path) -> None:
        model, corpus = toy_files

        run_analyze(make_cfg(f"paths.model='{model}'", f"paths.corpus='{corpus}'"))

        assert json.loads((tmp_path / "js_self.json").read_text(encoding="utf-8"))["values"] == [[0.0, 0.0], [0.0, 0.0]]

    def test_missing_model_path(self, make_cfg) -> None:
        assert run_analyze(make_cfg("command=analyze")) == EXIT_USAGE

    def test_out_of_vocab_corpus(self, make_cfg, toy_files, tmp_path: Path) -> None:
        model, _ = toy_files
        bad = write_corpus([([3, 4], None), ([3, 400], None)], tmp_path / "bad.jsonl")

        assert run_analyze(make_cfg(f"paths.model='{model}'", f"paths.corpus='{bad}'")) == EXIT_INPUT

    def test_corrupt_model(self, make_cfg, toy_files, tmp_path: Path) -> None:
        _, corpus = toy_files
        bad = tmp_path / "bad.sanw"
        bad.write_bytes(b"garbage")

        assert run_analyze(make_cfg(f"paths.model='{bad}'", f"paths.corpus='{corpus}'")) == EXIT_INPUT


class TestRunDecode:
    """Tests for command=decode."""

    @pytest.mark.parametrize("beam", [1, 3])
    def test_writes_one_line_per_sentence(self, make_cfg, toy_files, tmp_path: Path, beam: int) -> None:
        model, corpus = toy_files

        code = run_decode(make_cfg(f"paths.model='{model}'", f"paths.corpus='{corpus}'", f"decode.beam={beam}", "decode.max_len=5"))

        assert code == EXIT_SUCCESS
        lines = [json.loads(line) for line in (tmp_path / "decodes.jsonl").read_text(encoding="utf-8").splitlines()]
        assert [line["src"] for line in lines] == [src for src, _ in CORPUS]
        assert all(len(line["hyp"]) <= 5 for line in lines)


class TestRunGradcheck:
    """Tests for command=gradcheck."""

    def test_passes(self, make_cfg, capsys) -> None:
        assert run_gradcheck(make_cfg("command=gradcheck", "model=gradcheck")) == EXIT_SUCCESS
        assert "PASSED" in capsys.readouterr().out

    def test_planted_fault_fails(self, make_cfg, capsys) -> None:
        code = run_gradcheck(make_cfg("model=gradcheck", "gradcheck.corrupt_param=dec.0.self.w_q"))

        assert code == EXIT_ERROR
        assert "FAILED" in capsys.readouterr().out


class TestRunBench:
    """Tests for command=bench."""

    def test_toy_bench(self, make_cfg, tmp_path: Path) -> None:
        cfg = make_cfg(
            "command=bench",
            "bench.variants.san.self=[2]",
            "bench.variants.san.encdec=[2]",
            "bench.batch=1",
            "bench.src_len=4",
            "bench.tgt_len=4",
        )

        assert run_bench(cfg) == EXIT_SUCCESS
        doc = json.loads((tmp_path / "bench.json").read_text(encoding="utf-8"))
        assert doc["speedups"]["baseline@beam1"] == 1.0
        assert "san@beam1" in doc["speedups"]
        assert pl.read_csv(tmp_path / "bench.csv")["policy_id"].to_list() == ["baseline", "san"]

    def test_variant_too_deep_for_model(self, make_cfg) -> None:
        assert run_bench(make_cfg("bench.batch=1", "bench.tgt_len=4", "bench.src_len=4")) == EXIT_USAGE

    def test_unmeasurable_workload(self, make_cfg) -> None:
        cfg = make_cfg("bench.variants={}", "bench.batch=1", "bench.tgt_len=2", "bench.src_len=2", "bench.min_wall_seconds=1000000")

        assert run_bench(cfg) == EXIT_ERROR


class TestRunTrainToy:
    """Tests for command=train-toy."""

    def test_writes_outputs(self, make_cfg, tmp_path: Path) -> None:
        cfg = make_cfg(
            "command=train-toy",
            "train.steps=3",
            "train.max_outer=1",
            "train.dataset_size=12",
            "train.checkpoint_every=1",
            "policy.sample_sentences=4",
        )

        assert run_train_toy(cfg) == EXIT_SUCCESS
        for name in ("model.sanw", "policy.json", "loss.csv", "js_curve.csv", "iterations.json"):
            assert (tmp_path / name).exists(), name
        assert len(pl.read_csv(tmp_path / "loss.csv")) == 3
        curve = pl.read_csv(tmp_path / "js_curve.csv")
        assert curve.columns == ["step", "js_1_2"]
        assert curve["step"].to_list() == [0, 1, 2, 3]
        iterations = json.loads((tmp_path / "iterations.json").read_text(encoding="utf-8"))
        assert iterations["converged"] is False
        assert load_weights(tmp_path / "model.sanw").policy.is_baseline()

    def test_same_seed_same_outputs(self, make_cfg, tmp_path: Path) -> None:
        overrides = ("train.steps=2", "train.max_outer=1", "train.dataset_size=10", "policy.sample_sentences=3", "seed=4")
        run_train_toy(make_cfg(*overrides))
        first = (tmp_path / "model.sanw").read_bytes()

        run_train_toy(make_cfg(*overrides))

        assert (tmp_path / "model.sanw").read_bytes() == first

    def test_divergence_keeps_partial_losses(self, make_cfg, tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setattr(training, "lr_at", lambda step, d_model, warmup: 1e300)
        cfg = make_cfg("train.steps=3", "train.max_outer=1", "train.dataset_size=12", "policy.sample_sentences=4")

        assert run_train_toy(cfg) == EXIT_ERROR
        assert len(pl.read_csv(tmp_path / "loss.csv")) == 1
        assert not (tmp_path / "model.sanw").exists()


class TestDispatch:
    """Tests for dispatch."""

    def test_unknown_command(self, make_cfg, capsys) -> None:
        assert dispatch(make_cfg("command=nope")) == EXIT_USAGE
        assert "Unknown command" in capsys.readouterr().out

    def test_default_is_params(self, make_cfg, tmp_path: Path) -> None:
        assert dispatch(make_cfg()) == EXIT_SUCCESS
        assert (tmp_path / "params.json").exists()
