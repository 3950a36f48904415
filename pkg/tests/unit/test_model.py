"""Unit tests for model layout, teacher-forced forward and cached decoding."""

import numpy as np
import pytest

from san_attn.domain.enums import AttentionKind
from san_attn.domain.errors import CapacityError, ConfigurationError, InputError
from san_attn.domain.models import ModelConfig, SharingPolicy
from san_attn.services.model import (
    BOS,
    DecodeSession,
    build,
    decode_step,
    embed,
    encode,
    forward_teacher,
    start_session,
    tensor_layout,
)
from san_attn.services.tensor import layer_norm
from tests.conftest import make_params, oracle_logits

SRC = [3, 7, 4, 9, 5]
TGT_IN = [BOS, 6, 8, 3, 10]


class TestLayout:
    """Tests for tensor_layout and build."""

    def test_shared_layers_drop_projections(self, six_layer_config: ModelConfig) -> None:
        policy = SharingPolicy.uniform(six_layer_config, self_blocks=[1, 5], encdec_blocks=[3, 3])

        names = {name for name, _ in tensor_layout(six_layer_config, policy)}

        assert {"dec.0.self.w_q", "dec.1.self.w_q", "dec.1.self.w_k"} <= names
        assert "dec.2.self.w_q" not in names and "dec.2.self.w_k" not in names
        assert "dec.2.self.w_v" in names and "dec.2.self.w_o" in names
        assert "dec.3.cross.w_q" in names
        assert not any(name.startswith(("dec.1.cross.", "dec.5.cross.")) for name in names)
        assert "dec.5.ln2.g" not in names and "dec.3.ln2.g" in names

    def test_policy_must_partition(self, small_config: ModelConfig) -> None:
        with pytest.raises(ConfigurationError):
            tensor_layout(small_config, SharingPolicy((2,), (1, 1, 1), (1, 1)))

    def test_build_is_deterministic(self, small_config: ModelConfig) -> None:
        a = make_params(small_config, seed=4)
        b = make_params(small_config, seed=4)

        assert list(a.tensors) == list(b.tensors)
        assert all(np.array_equal(a[name], b[name]) for name in a.tensors)

    def test_build_initial_values(self, small_config: ModelConfig) -> None:
        params = build(small_config, SharingPolicy.baseline(2, 3), 0)

        assert np.all(params["dec.0.ln1.g"] == 1.0)
        assert np.all(params["dec.0.ffn.b1"] == 0.0)
        assert params["embed"].shape == (small_config.vocab, small_config.d_model)


class TestForward:
    """Tests for the teacher-forced forward pass against a loop-based reference."""

    @pytest.mark.parametrize(
        "blocks",
        [
            {},
            {"self_blocks": [1, 2], "encdec_blocks": [3]},
            {"self_blocks": [3], "encdec_blocks": [2, 1], "enc_blocks": [2]},
        ],
    )
    def test_matches_reference(self, small_config: ModelConfig, blocks: dict) -> None:
        params = make_params(small_config, seed=1, **blocks)

        teacher = forward_teacher(params, SRC, TGT_IN)

        np.testing.assert_allclose(teacher.logits, oracle_logits(params, SRC, TGT_IN), atol=1e-10)

    def test_size_one_blocks_are_the_baseline(self, small_config: ModelConfig) -> None:
        explicit = make_params(small_config, self_blocks=[1, 1, 1], encdec_blocks=[1, 1, 1], enc_blocks=[1, 1], seed=2)
        baseline = build(small_config, SharingPolicy.baseline(2, 3), 2)

        np.testing.assert_array_equal(forward_teacher(explicit, SRC, TGT_IN).logits, forward_teacher(baseline, SRC, TGT_IN).logits)

    def test_shared_layers_report_bottom_weights(self, six_layer_config: ModelConfig) -> None:
        params = make_params(six_layer_config, self_blocks=[1, 5], encdec_blocks=[3, 3], seed=3)

        teacher = forward_teacher(params, SRC, TGT_IN)

        assert all(teacher.self_weights[i] is teacher.self_weights[1] for i in range(2, 6))
        assert teacher.self_weights[0] is not teacher.self_weights[1]
        assert teacher.encdec_weights[2] is teacher.encdec_weights[0]
        assert teacher.encdec_weights[4] is teacher.encdec_weights[3]
        assert teacher.self_weights[0].shape == (2, 5, 5)
        assert teacher.encdec_weights[0].shape == (2, 5, 5)

    def test_zero_sublayers_reduce_to_embedding(self, small_config: ModelConfig) -> None:
        params = make_params(small_config, self_blocks=[3], encdec_blocks=[1, 2], seed=5)
        for name in params.tensors:
            if name.endswith((".w_o", ".ffn.w2", ".ffn.b2")):
                params.tensors[name][:] = 0.0

        logits = forward_teacher(params, SRC, TGT_IN).logits

        y = embed(params, np.array(TGT_IN))
        expected = layer_norm(y, params["dec.ln_f.g"], params["dec.ln_f.b"], small_config.ln_eps) @ params["out_proj"]
        np.testing.assert_allclose(logits, expected, atol=1e-12)

    @pytest.mark.parametrize("blocks", [{}, {"self_blocks": [1, 2], "encdec_blocks": [3]}])
    def test_future_tokens_do_not_change_earlier_logits(self, small_config: ModelConfig, blocks: dict) -> None:
        params = make_params(small_config, seed=6, **blocks)
        changed = TGT_IN[:3] + [7, 4]

        before = forward_teacher(params, SRC, TGT_IN).logits
        after = forward_teacher(params, SRC, changed).logits

        np.testing.assert_array_equal(after[:3], before[:3])
        assert not np.array_equal(after[3:], before[3:])

    def test_out_of_vocab_source(self, small_config: ModelConfig) -> None:
        params = make_params(small_config)

        with pytest.raises(InputError):
            forward_teacher(params, [3, small_config.vocab], TGT_IN)

    def test_source_too_long(self, small_config: ModelConfig) -> None:
        with pytest.raises(InputError):
            encode(make_params(small_config), [3] * (small_config.max_len + 1))

    def test_encoder_output_shape(self, small_config: ModelConfig) -> None:
        assert encode(make_params(small_config), SRC).shape == (len(SRC), small_config.d_model)


class TestCachedDecoding:
    """Tests that step-wise decoding reproduces the full causal forward."""

    @pytest.mark.parametrize(
        ("self_blocks", "encdec_blocks"),
        [
            ([1, 1, 1, 1, 1, 1], [1, 1, 1, 1, 1, 1]),
            ([6], [6]),
            ([3, 3], [3, 3]),
            ([2, 2, 2], [1, 5]),
        ],
    )
    def test_steps_match_teacher_forcing(self, six_layer_config: ModelConfig, self_blocks: list[int], encdec_blocks: list[int]) -> None:
        params = make_params(six_layer_config, self_blocks=self_blocks, encdec_blocks=encdec_blocks, seed=7)
        tokens = [BOS, 4, 9, 3, 7, 5]
        full = forward_teacher(params, SRC, tokens).logits

        session = start_session(params, SRC)
        for t, token in enumerate(tokens):
            np.testing.assert_allclose(decode_step(session, token), full[t], atol=1e-10)
        assert session.step == len(tokens)
        assert session.prefix == tokens

    def test_fork_continues_independently(self, small_config: ModelConfig) -> None:
        params = make_params(small_config, self_blocks=[1, 2], seed=8)
        session = DecodeSession(params, SRC)
        session.decode_step(BOS)
        session.decode_step(4)

        child = session.fork()
        child_logits = child.decode_step(9)
        parent_logits = session.decode_step(5)

        np.testing.assert_allclose(child_logits, forward_teacher(params, SRC, [BOS, 4, 9]).logits[-1], atol=1e-10)
        np.testing.assert_allclose(parent_logits, forward_teacher(params, SRC, [BOS, 4, 5]).logits[-1], atol=1e-10)

    def test_capacity(self, small_config: ModelConfig) -> None:
        session = start_session(make_params(small_config), SRC)
        for _ in range(small_config.max_len):
            session.decode_step(BOS)

        with pytest.raises(CapacityError):
            session.decode_step(BOS)

    def test_token_out_of_vocab(self, small_config: ModelConfig) -> None:
        with pytest.raises(InputError):
            start_session(make_params(small_config), SRC).decode_step(-1)

    def test_encoder_sharing_is_honoured(self, small_config: ModelConfig) -> None:
        params = make_params(small_config, enc_blocks=[2], seed=9)

        session = start_session(params, SRC)

        np.testing.assert_allclose(session.decode_step(BOS), forward_teacher(params, SRC, [BOS]).logits[0], atol=1e-10)
        assert "enc.1.self.w_q" not in params
        assert params.policy.bottoms(AttentionKind.ENC) == [0, 0]
