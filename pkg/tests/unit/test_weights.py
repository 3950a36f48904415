"""Unit tests for the weight container."""

import json
from pathlib import Path

import numpy as np
import pytest

from san_attn.data_access.weights import MAGIC, decode_weights, encode_weights, load_weights, save_weights
from san_attn.domain.errors import FormatError
from san_attn.domain.models import ModelConfig, SharingPolicy
from tests.conftest import make_params


class TestWeightContainer:
    """Tests for saving and loading weights."""

    def test_save_load_save_is_byte_identical(self, six_layer_config: ModelConfig, tmp_path: Path) -> None:
        params = make_params(six_layer_config, self_blocks=[1, 5], encdec_blocks=[3, 3], seed=1)
        first = save_weights(params, tmp_path / "a.sanw")

        loaded = load_weights(first)
        second = save_weights(loaded, tmp_path / "b.sanw")

        assert first.read_bytes() == second.read_bytes()
        assert loaded.policy == params.policy
        assert loaded.config == params.config

    def test_values_survive_at_float32_precision(self, small_config: ModelConfig, tmp_path: Path) -> None:
        params = make_params(small_config, seed=2)

        loaded = load_weights(save_weights(params, tmp_path / "m.sanw"))

        assert list(loaded.tensors) == list(params.tensors)
        for name in params.tensors:
            assert loaded[name].dtype == np.float64
            np.testing.assert_allclose(loaded[name], params[name], rtol=1e-6, atol=1e-7)

    def test_absent_projections_not_stored(self, six_layer_config: ModelConfig) -> None:
        data = encode_weights(make_params(six_layer_config, self_blocks=[6], seed=3))
        length = int.from_bytes(data[8:16], "little")
        names = [r["name"] for r in json.loads(data[16 : 16 + length])["tensors"]]

        assert "dec.3.self.w_q" not in names
        assert "dec.3.self.w_v" in names

    def test_truncated_blob(self, small_config: ModelConfig) -> None:
        data = encode_weights(make_params(small_config))

        with pytest.raises(FormatError):
            decode_weights(data[:-4])

    def test_bad_magic(self, small_config: ModelConfig) -> None:
        data = encode_weights(make_params(small_config))

        with pytest.raises(FormatError, match="magic"):
            decode_weights(b"NOTSANW0" + data[len(MAGIC) :])

    def test_too_short(self) -> None:
        with pytest.raises(FormatError):
            decode_weights(b"SANW")

    def test_manifest_overrun(self) -> None:
        with pytest.raises(FormatError):
            decode_weights(MAGIC + (1000).to_bytes(8, "little") + b"{}")

    def test_policy_mismatch(self, small_config: ModelConfig) -> None:
        data = encode_weights(make_params(small_config, self_blocks=[3]))

        with pytest.raises(FormatError):
            decode_weights(data, expected_policy=SharingPolicy.baseline(2, 3))

    def test_expected_policy_accepted(self, small_config: ModelConfig) -> None:
        params = make_params(small_config, self_blocks=[3])

        assert decode_weights(encode_weights(params), expected_policy=params.policy).policy == params.policy

    def test_manifest_layout_mismatch(self, small_config: ModelConfig) -> None:
        data = encode_weights(make_params(small_config))
        length = int.from_bytes(data[8:16], "little")
        manifest = json.loads(data[16 : 16 + length])
        manifest["tensors"] = manifest["tensors"][1:]
        raw = json.dumps(manifest).encode()

        with pytest.raises(FormatError, match="layout"):
            decode_weights(MAGIC + len(raw).to_bytes(8, "little") + raw + data[16 + length :])

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(FormatError):
            load_weights(tmp_path / "absent.sanw")
