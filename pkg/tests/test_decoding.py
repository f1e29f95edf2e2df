"""Length-candidate decoding: scaling math, blank stripping, candidate
ranking, and the mask-exclusion rule."""

import numpy as np
import pytest

from axenat import (
    DecodeConfig,
    DecodeResult,
    ToyModelConfig,
    decode,
    init_params,
    length_logits_from_source,
    scale_length,
    strip_epsilon,
)
from axenat.vocab import EPSILON_ID, MASK_ID

CFG = ToyModelConfig(d_model=8, n_layers=1, max_len=8)
VOCAB = 7


def fresh_params(seed=0):
    return init_params(CFG, VOCAB, VOCAB, np.random.default_rng(seed))


def rigged_params(len_scores, out_bias):
    """All-zero model except a fixed length head and output bias, so every
    decoded position carries the same distribution."""
    params = {k: np.zeros_like(v) for k, v in fresh_params().items()}
    params["len_b"][:len(len_scores)] = len_scores
    params["out_b"][:len(out_bias)] = out_bias
    return params


class TestScaleLength:
    def test_multiplier_one_is_identity(self):
        for L in range(1, 30):
            assert scale_length(L, 1.0, 64) == L

    def test_rounds_to_nearest_with_half_up(self):
        assert scale_length(10, 1.05, 64) == 11   # 10.5 rounds up
        assert scale_length(4, 1.05, 64) == 4     # 4.2 rounds down
        assert scale_length(19, 1.05, 64) == 20   # 19.95 rounds up

    def test_clamps_to_the_valid_range(self):
        assert scale_length(63, 1.05, 64) == 64
        assert scale_length(200, 1.05, 64) == 64
        assert scale_length(1, 1.0, 64) == 1


class TestStripEpsilon:
    def test_preserves_order_and_indices(self):
        ids = np.array([4, EPSILON_ID, 5, EPSILON_ID, EPSILON_ID, 6])
        tokens, kept = strip_epsilon(ids)
        assert tokens.tolist() == [4, 5, 6]
        assert kept.tolist() == [0, 2, 5]

    def test_all_blank_yields_empty(self):
        tokens, kept = strip_epsilon(np.full(4, EPSILON_ID))
        assert tokens.size == 0 and kept.size == 0


class TestDecodeConfig:
    def test_rejects_shrinking_multipliers(self):
        with pytest.raises(ValueError, match="multiplier"):
            DecodeConfig(length_multiplier=0.9)

    def test_rejects_more_candidates_than_lengths(self):
        with pytest.raises(ValueError, match="num_length_candidates"):
            DecodeConfig(num_length_candidates=65, max_len=64)


class TestDecodeResult:
    def test_rejects_reserved_ids_in_tokens(self):
        with pytest.raises(AssertionError):
            DecodeResult(tokens=(4, MASK_ID), raw_length=2,
                         chosen_length_candidate=2,
                         chosen_logprobs=np.zeros(2),
                         candidate_scores=(0.0,), raw_ids=np.array([4, 1]),
                         kept_positions=np.array([0, 1]),
                         logp=np.zeros((2, 7)))


class TestDecode:
    def test_is_deterministic(self):
        params = fresh_params(3)
        src = np.array([2, 3, 4, 5])
        dec = DecodeConfig(max_len=8)
        a = decode(params, CFG, src, dec)
        b = decode(params, CFG, src, dec)
        assert a.tokens == b.tokens
        assert a.candidate_scores == b.candidate_scores
        assert np.array_equal(a.raw_ids, b.raw_ids)

    def test_raw_length_is_the_scaled_winning_candidate(self):
        params = fresh_params(4)
        dec = DecodeConfig(length_multiplier=1.05, num_length_candidates=3,
                           max_len=8)
        res = decode(params, CFG, np.array([2, 3, 4]), dec)
        assert res.raw_length == scale_length(res.chosen_length_candidate,
                                              1.05, 8)
        assert len(res.candidate_scores) == 3

    def test_never_emits_the_mask_token(self):
        # even a model rigged to put all its mass on <mask> must not pick it
        params = rigged_params(len_scores=[0.0, 3.0],
                               out_bias=[0.0, 10.0, 0.0, 0.0, 5.0])
        res = decode(params, CFG, np.array([2, 2]),
                     DecodeConfig(num_length_candidates=2, max_len=8))
        assert (res.raw_ids != MASK_ID).all()
        assert (res.raw_ids == 4).all()   # runner-up token wins every slot

    def test_blank_heavy_output_strips_to_empty(self):
        params = rigged_params(len_scores=[0.0, 0.0, 4.0],
                               out_bias=[10.0, 0.0, 0.0, 5.0])
        res = decode(params, CFG, np.array([2, 3]),
                     DecodeConfig(num_length_candidates=1, max_len=8))
        assert (res.raw_ids == EPSILON_ID).all()
        assert res.tokens == ()
        assert res.kept_positions.size == 0
        assert res.raw_length == 3

    def test_equal_scores_keep_the_first_candidate(self):
        # an output bias of +50 on one token makes its log-probability
        # exactly 0.0 (1 + 6e^-50 rounds to 1.0 in doubles), so the token
        # sum cancels for every length; equal length logits then tie the
        # joint scores bitwise and the higher-ranked candidate must win
        params = rigged_params(len_scores=[0.0, 5.0, 0.0, 5.0],
                               out_bias=[0.0, 0.0, 50.0])
        res = decode(params, CFG, np.array([2, 3]),
                     DecodeConfig(length_multiplier=1.0,
                                  num_length_candidates=2, max_len=8))
        assert res.candidate_scores[0] == res.candidate_scores[1]
        assert res.chosen_length_candidate == 2

    def test_score_is_the_joint_length_and_token_logprob(self):
        params = fresh_params(6)
        src = np.array([2, 3, 4, 5, 6])
        dec = DecodeConfig(num_length_candidates=1, max_len=8)
        res = decode(params, CFG, src, dec)
        len_logits = length_logits_from_source(params, CFG, src)
        len_logprobs = len_logits - len_logits.max()
        len_logprobs -= np.log(np.exp(len_logprobs).sum())
        recomputed = (len_logprobs[res.chosen_length_candidate - 1]
                      + res.logp[np.arange(res.raw_length), res.raw_ids].sum())
        assert res.candidate_scores[0] == pytest.approx(float(recomputed),
                                                        rel=1e-15)
        assert np.array_equal(
            res.chosen_logprobs,
            res.logp[np.arange(res.raw_length), res.raw_ids])

    def test_tokens_are_the_unstripped_survivors(self):
        params = fresh_params(8)
        res = decode(params, CFG, np.array([4, 5]),
                     DecodeConfig(num_length_candidates=4, max_len=8))
        assert res.tokens == tuple(int(t) for t in res.raw_ids[res.kept_positions])
