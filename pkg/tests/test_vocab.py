import numpy as np
import pytest

from axenat.vocab import (
    EPSILON_ID,
    EPSILON_TOKEN,
    MASK_ID,
    MASK_TOKEN,
    LogProbMatrix,
    MaskedInput,
    SourceSequence,
    TargetSequence,
    build_vocabulary,
    decode_ids,
    encode_tokens,
    validate_logprob_matrix,
)


class TestVocabulary:
    def test_reserved_ids(self):
        v = build_vocabulary(["a", "b", "c"])
        assert v.size == 5
        assert v.token_of(EPSILON_ID) == EPSILON_TOKEN
        assert v.token_of(MASK_ID) == MASK_TOKEN
        assert v.id_of("a") == 2
        assert v.id_of("c") == 4

    def test_roundtrip(self):
        v = build_vocabulary([f"t{i}" for i in range(10)])
        ids = encode_tokens(v, ["t3", "t0", "t9"])
        assert decode_ids(v, ids) == ["t3", "t0", "t9"]

    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="empty"):
            build_vocabulary([])

    def test_rejects_reserved(self):
        with pytest.raises(ValueError, match="reserved"):
            build_vocabulary(["a", MASK_TOKEN])

    def test_rejects_duplicate(self):
        with pytest.raises(ValueError, match="duplicate"):
            build_vocabulary(["a", "b", "a"])

    def test_unknown_token(self):
        v = build_vocabulary(["a"])
        with pytest.raises(KeyError):
            v.id_of("zzz")


class TestSequences:
    def test_target_is_readonly(self):
        Y = TargetSequence([2, 3, 4])
        with pytest.raises(ValueError):
            Y.ids[0] = 5

    def test_target_rejects_reserved_ids(self):
        with pytest.raises(ValueError, match="reserved id"):
            TargetSequence([2, EPSILON_ID, 3])
        with pytest.raises(ValueError, match="reserved id"):
            SourceSequence([MASK_ID])

    def test_target_rejects_empty(self):
        with pytest.raises(ValueError, match="non-empty"):
            TargetSequence([])

    def test_len(self):
        assert len(TargetSequence([7, 8])) == 2
        assert len(SourceSequence([5])) == 1


class TestMaskedInput:
    def test_consistency_enforced(self):
        mi = MaskedInput(ids=[2, MASK_ID, 4], observed=[True, False, True])
        assert mi.num_masked == 1

    def test_mask_must_be_unobserved(self):
        with pytest.raises(ValueError, match="disagree"):
            MaskedInput(ids=[2, MASK_ID], observed=[True, True])

    def test_observed_must_be_real(self):
        with pytest.raises(ValueError, match="disagree"):
            MaskedInput(ids=[2, 3], observed=[True, False])

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            MaskedInput(ids=[2, 3], observed=[True])


class TestLogProbMatrix:
    def test_shape_properties(self):
        P = LogProbMatrix(np.full((3, 5), -np.log(5)))
        assert P.m == 3 and P.V == 5
        assert not P.overridden.any()

    def test_rejects_nonfinite(self):
        bad = np.full((2, 3), -1.0)
        bad[1, 2] = -np.inf
        with pytest.raises(ValueError, match="finite"):
            LogProbMatrix(bad)

    def test_values_readonly(self):
        P = LogProbMatrix(np.full((2, 3), -np.log(3)))
        with pytest.raises(ValueError):
            P.values[0, 0] = 0.0

    def test_validation_passes_normalized(self):
        rng = np.random.default_rng(42)
        logits = rng.normal(size=(4, 6))
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        report = validate_logprob_matrix(LogProbMatrix(logp))
        assert report.ok
        np.testing.assert_allclose(report.row_residuals, 0.0, atol=1e-12)

    def test_validation_flags_unnormalized_row(self):
        logp = np.full((3, 4), -np.log(4))
        logp[1] -= 0.5
        report = validate_logprob_matrix(LogProbMatrix(logp))
        assert not report.ok
        assert report.row_residuals[1] > 0.4
        assert report.row_residuals[0] < 1e-12

    def test_validation_flags_positive_entry(self):
        logp = np.full((2, 4), -np.log(4))
        logp[0, 1] = 0.01  # probability above one
        report = validate_logprob_matrix(LogProbMatrix(logp))
        assert not report.ok
        assert report.max_positive_entry == pytest.approx(0.01)

    def test_overridden_rows_skip_normalization(self):
        # an anchored row is one-hot in log space with a large negative floor
        logp = np.full((2, 4), -np.log(4))
        logp[0] = -1e9
        logp[0, 2] = 0.0
        report = validate_logprob_matrix(
            LogProbMatrix(logp, overridden=[True, False]))
        assert report.ok
        assert report.row_residuals[0] == 0.0
