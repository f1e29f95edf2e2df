"""Masking draws, the observed-row anchor, label smoothing, and the
sequence-level objective wrapper."""

import numpy as np
import pytest
from scipy import stats

from axenat import (
    AxeConfig,
    LogProbMatrix,
    LossKind,
    MaskedInput,
    ObjectiveVariant,
    TargetSequence,
    apply_observed_override,
    axe_backtrace,
    axe_forward,
    draw_masked_input,
    logit_grad_from_logp_grad,
    mask_all,
    mask_partial,
    min_decision_margin,
    random_instance,
    sequence_objective,
    smooth_grad_chain,
    smooth_log_probs,
)
from axenat.axe import ALIGN, SKIP_PREDICTION, SKIP_TARGET
from axenat.vocab import EPSILON_ID, MASK_ID, NEG_SENTINEL


def target(ids):
    return TargetSequence(np.array(ids, dtype=np.int64))


class TestMaskingDraws:
    def test_mask_all_hides_everything(self):
        masked = mask_all(target([4, 2, 7]))
        assert not masked.observed.any()
        assert (masked.ids == MASK_ID).all()
        assert masked.num_masked == 3

    def test_partial_masks_at_least_one_position(self):
        for seed in range(200):
            draw = mask_partial(target([2, 3, 4, 5]), seed)
            assert 1 <= draw.num_masked <= 4

    def test_single_token_always_fully_masked(self):
        for seed in range(50):
            draw = mask_partial(target([9]), seed)
            assert draw.num_masked == 1
            assert draw.input.ids[0] == MASK_ID

    def test_same_seed_reproduces_the_draw(self):
        a = mask_partial(target([2, 3, 4, 5, 6]), 1234)
        b = mask_partial(target([2, 3, 4, 5, 6]), 1234)
        assert np.array_equal(a.input.ids, b.input.ids)
        assert np.array_equal(a.input.observed, b.input.observed)

    def test_observed_positions_keep_their_tokens(self):
        Y = target([5, 6, 7, 8, 9, 10])
        draw = mask_partial(Y, 77)
        obs = draw.input.observed
        assert np.array_equal(draw.input.ids[obs], Y.ids[obs])

    def test_mask_count_is_uniform(self):
        # k ~ Uniform{1..n}: chi-square on 30k draws should not reject
        n = 6
        Y = target(list(range(2, 2 + n)))
        counts = np.zeros(n, dtype=np.int64)
        for seed in range(30_000):
            counts[mask_partial(Y, seed).num_masked - 1] += 1
        result = stats.chisquare(counts)
        assert result.pvalue > 0.01, f"k counts {counts.tolist()}"

    def test_masked_subsets_are_uniform_given_k(self):
        # condition on k=2 over n=5: all 10 subsets should be equally likely
        Y = target([2, 3, 4, 5, 6])
        subset_counts = {}
        for seed in range(20_000):
            draw = mask_partial(Y, seed)
            if draw.num_masked != 2:
                continue
            key = tuple(np.nonzero(~draw.input.observed)[0].tolist())
            subset_counts[key] = subset_counts.get(key, 0) + 1
        assert len(subset_counts) == 10
        result = stats.chisquare(list(subset_counts.values()))
        assert result.pvalue > 0.01, f"subset counts {subset_counts}"

    def test_draw_dispatches_on_variant(self):
        Y = target([2, 3, 4])
        assert not draw_masked_input(
            Y, ObjectiveVariant.UNOBSERVED_PREDICT_ALL, 5).observed.any()
        partial = draw_masked_input(
            Y, ObjectiveVariant.PARTIAL_PREDICT_MASKS, 5)
        assert np.array_equal(
            partial.ids,
            draw_masked_input(Y, ObjectiveVariant.PARTIAL_PREDICT_ALL, 5).ids)

    def test_variant_flags_round_trip(self):
        for variant in ObjectiveVariant:
            assert ObjectiveVariant.from_flag(variant.value) is variant
        with pytest.raises(ValueError, match="unknown objective"):
            ObjectiveVariant.from_flag("everything")


class TestObservedOverride:
    def test_no_observed_positions_is_identity(self):
        rng = np.random.default_rng(3)
        _, P = random_instance(rng, 3, 3, 6)
        masked = mask_all(target([2, 3, 4]))
        assert apply_observed_override(P, masked) is P

    def test_anchored_rows_are_sentinel_except_their_token(self):
        rng = np.random.default_rng(4)
        Y, P = random_instance(rng, 4, 4, 6)
        ids = Y.ids.copy()
        observed = np.array([True, False, True, False])
        ids[~observed] = MASK_ID
        out = apply_observed_override(P, MaskedInput(ids=ids, observed=observed))
        for j in (0, 2):
            row = out.values[j].copy()
            assert row[Y.ids[j]] == 0.0
            row[Y.ids[j]] = NEG_SENTINEL
            assert (row == NEG_SENTINEL).all()
            assert out.overridden[j]
        for j in (1, 3):
            assert np.array_equal(out.values[j], P.values[j])
            assert not out.overridden[j]

    def test_row_count_must_match(self):
        rng = np.random.default_rng(5)
        _, P = random_instance(rng, 3, 3, 6)
        with pytest.raises(ValueError, match="4 positions"):
            apply_observed_override(P, mask_all(target([2, 3, 4, 5])))

    def test_fully_observed_sequence_costs_nothing(self):
        rng = np.random.default_rng(6)
        Y, P = random_instance(rng, 5, 5, 7)
        masked = MaskedInput(ids=Y.ids.copy(),
                             observed=np.ones(5, dtype=bool))
        result = sequence_objective(
            Y, P.values, masked, ObjectiveVariant.PARTIAL_PREDICT_MASKS,
            LossKind.AXE, AxeConfig(delta=1.0), label_smoothing=0.0)
        assert result.loss == 0.0
        assert (result.grad_logp == 0.0).all()

    def test_anchor_usually_lowers_the_loss_and_always_explicably(self):
        # Anchoring observed rows mostly removes cost (their own token is
        # free), but it can raise the optimum when the unanchored optimal
        # path routed a foreign token or a blank through an observed row;
        # every increase must be explained by that mechanism.
        rng = np.random.default_rng(99)
        cfg = AxeConfig(delta=1.0)
        increases = 0
        total = 0
        for _ in range(300):
            n = int(rng.integers(2, 7))
            Y, P = random_instance(rng, n, n, int(rng.integers(4, 9)))
            draw = mask_partial(Y, int(rng.integers(0, 2**32)))
            if not draw.input.observed.any():
                continue
            total += 1
            plain = axe_forward(Y, P, cfg)
            anchored = apply_observed_override(P, draw.input)
            masked_loss = axe_forward(Y, anchored, cfg).loss
            if masked_loss <= plain.loss + 1e-12:
                continue
            increases += 1
            trace = axe_backtrace(plain, Y, P, cfg)
            routed_foreign = False
            for op in trace.ops:
                j = op.j - 1
                if not draw.input.observed[j]:
                    continue
                if op.kind == SKIP_PREDICTION:
                    routed_foreign = True
                elif int(Y.ids[op.i - 1]) != int(draw.input.ids[j]):
                    routed_foreign = True
            assert routed_foreign, "loss rose without a blocked-row cause"
        assert total > 200
        assert increases / total < 0.10

    def test_override_happens_after_smoothing(self):
        # smoothing an anchored row would bleed -1e9 into every entry; the
        # effective matrix must keep the anchor exact instead
        rng = np.random.default_rng(11)
        Y, P = random_instance(rng, 3, 3, 6)
        ids = Y.ids.copy()
        observed = np.array([False, True, False])
        ids[~observed] = MASK_ID
        masked = MaskedInput(ids=ids, observed=observed)
        result = sequence_objective(
            Y, P.values, masked, ObjectiveVariant.PARTIAL_PREDICT_MASKS,
            LossKind.CROSS_ENTROPY, AxeConfig(), label_smoothing=0.2)
        smoothed = smooth_log_probs(P.values, 0.2)
        expected = -(smoothed[0, Y.ids[0]] + 0.0 + smoothed[2, Y.ids[2]])
        assert result.loss == pytest.approx(expected, rel=1e-12)


class TestSmoothing:
    def test_matches_the_two_term_mix(self):
        rng = np.random.default_rng(8)
        vals = rng.normal(size=(3, 5))
        eps = 0.1
        out = smooth_log_probs(vals, eps)
        for i in range(3):
            for v in range(5):
                want = (1 - eps) * vals[i, v] + eps / 5 * vals[i].sum()
                assert out[i, v] == pytest.approx(want, rel=1e-15)

    def test_zero_eps_returns_an_independent_copy(self):
        vals = np.zeros((2, 4))
        out = smooth_log_probs(vals, 0.0)
        assert out is not vals
        assert np.array_equal(out, vals)

    def test_gradient_chain_is_the_same_mix(self):
        rng = np.random.default_rng(9)
        g = rng.normal(size=(4, 6))
        assert np.allclose(smooth_grad_chain(g, 0.3),
                           smooth_log_probs(g, 0.3), rtol=0, atol=0)

    def test_smoothed_ce_equals_the_stated_per_token_form(self):
        rng = np.random.default_rng(10)
        Y, P = random_instance(rng, 4, 4, 7)
        eps = 0.15
        result = sequence_objective(
            Y, P.values, mask_all(Y), ObjectiveVariant.UNOBSERVED_PREDICT_ALL,
            LossKind.CROSS_ENTROPY, AxeConfig(), label_smoothing=eps)
        V = P.V
        want = sum(-(1 - eps) * P.values[i, Y.ids[i]]
                   - eps / V * P.values[i].sum() for i in range(4))
        assert result.loss == pytest.approx(want, rel=1e-12)


class TestSequenceObjective:
    def test_row_count_mismatch_is_rejected(self):
        rng = np.random.default_rng(12)
        Y, P = random_instance(rng, 3, 4, 6)
        with pytest.raises(ValueError, match="expected 3 prediction rows"):
            sequence_objective(Y, P.values, mask_all(Y),
                               ObjectiveVariant.UNOBSERVED_PREDICT_ALL,
                               LossKind.AXE, AxeConfig(), 0.0)

    def test_masked_length_mismatch_is_rejected(self):
        rng = np.random.default_rng(13)
        Y, P = random_instance(rng, 3, 3, 6)
        with pytest.raises(ValueError, match="masked input length"):
            sequence_objective(Y, P.values, mask_all(target([2, 3])),
                               ObjectiveVariant.UNOBSERVED_PREDICT_ALL,
                               LossKind.AXE, AxeConfig(), 0.0)

    def test_plain_ce_gradient_is_minus_one_hot(self):
        rng = np.random.default_rng(14)
        Y, P = random_instance(rng, 4, 4, 6)
        result = sequence_objective(
            Y, P.values, mask_all(Y), ObjectiveVariant.UNOBSERVED_PREDICT_ALL,
            LossKind.CROSS_ENTROPY, AxeConfig(), label_smoothing=0.0)
        want = np.zeros_like(P.values)
        want[np.arange(4), Y.ids] = -1.0
        assert np.array_equal(result.grad_logp, want)

    def test_perfect_predictions_cost_nothing_without_smoothing(self):
        # a model that nails every token pays zero under the aligned loss,
        # and a near-perfect one pays at most its per-token slack
        n, V = 4, 6
        Y = TargetSequence(np.array([2, 3, 4, 5]))
        exact = np.full((n, V), -60.0)
        exact[np.arange(n), Y.ids] = 0.0
        res = sequence_objective(
            Y, exact, mask_all(Y), ObjectiveVariant.UNOBSERVED_PREDICT_ALL,
            LossKind.AXE, AxeConfig(), label_smoothing=0.0)
        assert res.loss == 0.0

        near = np.full((n, V), -60.0)
        near[np.arange(n), Y.ids] = -5e-4
        res = sequence_objective(
            Y, near, mask_all(Y), ObjectiveVariant.UNOBSERVED_PREDICT_ALL,
            LossKind.AXE, AxeConfig(), label_smoothing=0.0)
        assert res.loss / n <= 1e-3

    def test_axe_loss_matches_engine_on_unmasked_input(self):
        rng = np.random.default_rng(15)
        Y, P = random_instance(rng, 5, 5, 7)
        cfg = AxeConfig(delta=2.0)
        result = sequence_objective(
            Y, P.values, mask_all(Y), ObjectiveVariant.UNOBSERVED_PREDICT_ALL,
            LossKind.AXE, cfg, label_smoothing=0.0)
        assert result.loss == axe_forward(Y, P, cfg).loss
        assert result.trace is not None

    def test_overridden_rows_carry_zero_gradient(self):
        rng = np.random.default_rng(16)
        Y, P = random_instance(rng, 5, 5, 7)
        draw = mask_partial(Y, 4242)
        result = sequence_objective(
            Y, P.values, draw.input, ObjectiveVariant.PARTIAL_PREDICT_MASKS,
            LossKind.AXE, AxeConfig(delta=1.0), label_smoothing=0.1)
        obs = draw.input.observed
        assert (result.grad_logp[obs] == 0.0).all()
        assert np.abs(result.grad_logp[~obs]).sum() > 0

    @pytest.mark.parametrize("loss_kind", [LossKind.AXE, LossKind.CROSS_ENTROPY])
    @pytest.mark.parametrize("variant", list(ObjectiveVariant))
    def test_gradient_matches_finite_differences(self, loss_kind, variant):
        # the loss is piecewise linear in logp, so away from decision
        # boundaries a central difference recovers the coefficient exactly
        rng = np.random.default_rng(17)
        cfg = AxeConfig(delta=1.5)
        eps_ls = 0.1
        h = 1e-6
        checked = 0
        for trial in range(30):
            n = int(rng.integers(2, 6))
            Y, P = random_instance(rng, n, n, int(rng.integers(4, 8)))
            masked = draw_masked_input(Y, variant, int(rng.integers(0, 2**32)))
            eff = LogProbMatrix(smooth_log_probs(P.values, eps_ls))
            if variant is ObjectiveVariant.PARTIAL_PREDICT_MASKS:
                eff = apply_observed_override(eff, masked)
            if (loss_kind is LossKind.AXE
                    and min_decision_margin(Y, eff, cfg) < 1e-3):
                continue
            checked += 1
            result = sequence_objective(Y, P.values, masked, variant,
                                        loss_kind, cfg, eps_ls)
            coords = [(j, v) for j in range(n) for v in range(P.V)]
            for j, v in coords:
                up = P.values.copy()
                up[j, v] += h
                down = P.values.copy()
                down[j, v] -= h
                lo = sequence_objective(Y, down, masked, variant, loss_kind,
                                        cfg, eps_ls).loss
                hi = sequence_objective(Y, up, masked, variant, loss_kind,
                                        cfg, eps_ls).loss
                fd = (hi - lo) / (2 * h)
                assert fd == pytest.approx(result.grad_logp[j, v],
                                           rel=1e-4, abs=1e-6)
            if checked >= 4:
                break
        assert checked >= 3

    def test_axe_subgradient_coefficients_follow_the_ops(self):
        rng = np.random.default_rng(18)
        Y, P = random_instance(rng, 4, 4, 6)
        cfg = AxeConfig(delta=2.5)
        result = sequence_objective(
            Y, P.values, mask_all(Y), ObjectiveVariant.UNOBSERVED_PREDICT_ALL,
            LossKind.AXE, cfg, label_smoothing=0.0)
        want = np.zeros_like(P.values)
        for op in result.trace.ops:
            if op.kind == ALIGN:
                want[op.j - 1, Y.ids[op.i - 1]] -= 1.0
            elif op.kind == SKIP_PREDICTION:
                want[op.j - 1, EPSILON_ID] -= 1.0
            else:
                assert op.kind == SKIP_TARGET
                want[op.j - 1, Y.ids[op.i - 1]] -= cfg.delta
        assert np.array_equal(result.grad_logp, want)


class TestLogitChain:
    def test_rows_sum_to_zero(self):
        rng = np.random.default_rng(19)
        g = rng.normal(size=(5, 7))
        logits = rng.normal(size=(5, 7))
        probs = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        out = logit_grad_from_logp_grad(g, probs)
        assert np.allclose(out.sum(axis=1), 0.0, atol=1e-12)

    def test_matches_finite_differences_through_log_softmax(self):
        rng = np.random.default_rng(20)
        g = rng.normal(size=(2, 5))
        logits = rng.normal(size=(2, 5))

        def loss_of(z):
            shifted = z - z.max(axis=1, keepdims=True)
            logp = shifted - np.log(
                np.exp(shifted).sum(axis=1, keepdims=True))
            return float((g * logp).sum())

        probs = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        analytic = logit_grad_from_logp_grad(g, probs)
        h = 1e-6
        for i in range(2):
            for v in range(5):
                up = logits.copy()
                up[i, v] += h
                down = logits.copy()
                down[i, v] -= h
                fd = (loss_of(up) - loss_of(down)) / (2 * h)
                assert fd == pytest.approx(analytic[i, v], rel=1e-5, abs=1e-8)
