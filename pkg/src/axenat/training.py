"""Deterministic training loop for the toy harness.

Every stochastic choice in step t (batch indices, masking draws) comes from a
generator seeded with SeedSequence((seed, t)), so a run can be reproduced or
resumed from any checkpoint without replaying earlier steps.  Sequence losses
are normalized per target token before batch averaging; the length head adds a
small auxiliary cross-entropy term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .axe import ALIGN, SKIP_PREDICTION, SKIP_TARGET, AxeConfig
from .decoding import DecodeConfig, DecodeResult, decode
from .metrics import repetition_rate, sequence_quality
from .model import (
    AdamState,
    ToyModelConfig,
    adam_step,
    backward,
    forward,
    init_params,
    lr_schedule,
)
from .objectives import (
    LossKind,
    ObjectiveVariant,
    draw_masked_input,
    logit_grad_from_logp_grad,
    sequence_objective,
)
from .tasks import SyntheticTaskSpec, build_task_vocab, generate_task_data
from .vocab import SourceSequence, TargetSequence, Vocabulary

LENGTH_LOSS_WEIGHT = 0.1


@dataclass(frozen=True)
class StepRecord:
    step: int
    loss: float        # per-token sequence loss, batch mean
    length_loss: float
    lr: float
    skip_target_rate: float
    skip_prediction_rate: float


@dataclass(frozen=True)
class EvalRecord:
    step: int
    exact_match: float
    token_f1: float
    corpus_bleu: float
    repetition: float


@dataclass
class TrainState:
    params: dict
    adam: AdamState
    step: int = 0
    op_counts: dict = field(default_factory=lambda: {
        ALIGN: 0, SKIP_PREDICTION: 0, SKIP_TARGET: 0})
    total_targets: int = 0
    total_predictions: int = 0


@dataclass
class TrainResult:
    state: TrainState
    vocab: Vocabulary
    steps_log: list[StepRecord]
    evals_log: list[EvalRecord]
    train_pairs: list
    val_pairs: list


def make_datasets(task: SyntheticTaskSpec, train_count: int, val_count: int):
    train_pairs = generate_task_data(
        task, train_count, np.random.SeedSequence((task.seed, 0)))
    val_pairs = generate_task_data(
        task, val_count, np.random.SeedSequence((task.seed, 1)))
    return train_pairs, val_pairs


def init_state(model_cfg: ToyModelConfig, vocab: Vocabulary) -> TrainState:
    rng = np.random.default_rng(np.random.SeedSequence((model_cfg.seed, 2)))
    params = init_params(model_cfg, vocab.size, vocab.size, rng)
    return TrainState(params=params, adam=AdamState.zeros_like(params))


def _length_loss_and_grad(length_logits: np.ndarray, n: int):
    shifted = length_logits - length_logits.max()
    logz = np.log(np.exp(shifted).sum())
    loss = float(logz - shifted[n - 1])
    grad = np.exp(shifted - logz)
    grad[n - 1] -= 1.0
    return loss, grad


def train_step(state: TrainState, model_cfg: ToyModelConfig,
               loss_kind: LossKind, variant: ObjectiveVariant,
               axe_cfg: AxeConfig, train_pairs: list) -> StepRecord:
    t = state.step + 1
    rng = np.random.default_rng(np.random.SeedSequence((model_cfg.seed, 3, t)))
    idx = rng.integers(0, len(train_pairs), size=model_cfg.batch_size)

    grads_sum = None
    loss_sum = 0.0
    len_loss_sum = 0.0
    step_counts = {ALIGN: 0, SKIP_PREDICTION: 0, SKIP_TARGET: 0}
    step_targets = 0
    try:
        for b in idx:
            X, Y = train_pairs[b]
            n = len(Y)
            masked = draw_masked_input(Y, variant, rng)
            logp, length_logits, cache = forward(state.params, model_cfg,
                                                 X.ids, masked.ids)
            result = sequence_objective(Y, logp, masked, variant, loss_kind,
                                        axe_cfg, model_cfg.label_smoothing)
            len_loss, len_grad = _length_loss_and_grad(length_logits, n)
            grad_logits = logit_grad_from_logp_grad(result.grad_logp,
                                                    cache["probs"]) / n
            grads = backward(state.params, model_cfg, cache, grad_logits,
                             LENGTH_LOSS_WEIGHT * len_grad)
            if grads_sum is None:
                grads_sum = grads
            else:
                for k in grads_sum:
                    grads_sum[k] += grads[k]
            loss_sum += result.loss / n
            len_loss_sum += len_loss
            if result.trace is not None:
                for kind, c in result.trace.counts.items():
                    step_counts[kind] += c
            step_targets += n

        B = model_cfg.batch_size
        loss = loss_sum / B
        len_loss = len_loss_sum / B
        if not np.isfinite(loss) or not np.isfinite(len_loss):
            raise FloatingPointError("non-finite loss")
        for k in grads_sum:
            grads_sum[k] /= B
        adam_step(state.params, grads_sum, state.adam, model_cfg)
    except FloatingPointError as e:
        raise FloatingPointError(f"training diverged at step {t}: {e}") from None

    state.step = t
    for kind, c in step_counts.items():
        state.op_counts[kind] += c
    state.total_targets += step_targets
    state.total_predictions += step_targets  # m = n for every training call

    st_rate = step_counts[SKIP_TARGET] / step_targets
    sp_rate = step_counts[SKIP_PREDICTION] / step_targets
    return StepRecord(step=t, loss=loss, length_loss=len_loss,
                      lr=lr_schedule(model_cfg, t),
                      skip_target_rate=st_rate, skip_prediction_rate=sp_rate)


def evaluate(state: TrainState, model_cfg: ToyModelConfig,
             decode_cfg: DecodeConfig, val_pairs: list,
             ) -> tuple[dict, list[DecodeResult]]:
    decodes = [decode(state.params, model_cfg, X.ids, decode_cfg)
               for X, _ in val_pairs]
    outputs = [d.tokens for d in decodes]
    refs = [tuple(int(i) for i in Y.ids) for _, Y in val_pairs]
    quality = sequence_quality(outputs, refs)
    quality["repetition"] = repetition_rate(outputs)
    return quality, decodes


def train(task: SyntheticTaskSpec, model_cfg: ToyModelConfig,
          loss_kind: LossKind, variant: ObjectiveVariant, axe_cfg: AxeConfig,
          decode_cfg: DecodeConfig, *, train_count: int = 3000,
          val_count: int = 200, eval_every: int = 500,
          resume: TrainState | None = None) -> TrainResult:
    """Run (or continue) a full training loop; everything is a pure function
    of the configs and seeds."""
    vocab = build_task_vocab(task)
    train_pairs, val_pairs = make_datasets(task, train_count, val_count)
    longest = max(max(len(Y) for _, Y in train_pairs),
                  max(len(Y) for _, Y in val_pairs))
    if longest > model_cfg.max_len:
        raise ValueError(
            f"dataset contains a length-{longest} target but max_len is "
            f"{model_cfg.max_len}")

    state = resume if resume is not None else init_state(model_cfg, vocab)
    steps_log: list[StepRecord] = []
    evals_log: list[EvalRecord] = []
    while state.step < model_cfg.steps:
        record = train_step(state, model_cfg, loss_kind, variant, axe_cfg,
                            train_pairs)
        steps_log.append(record)
        if record.step % eval_every == 0 or record.step == model_cfg.steps:
            quality, _ = evaluate(state, model_cfg, decode_cfg, val_pairs)
            evals_log.append(EvalRecord(step=record.step,
                                        exact_match=quality["exact_match"],
                                        token_f1=quality["token_f1"],
                                        corpus_bleu=quality["corpus_bleu"],
                                        repetition=quality["repetition"]))
    return TrainResult(state=state, vocab=vocab, steps_log=steps_log,
                       evals_log=evals_log, train_pairs=train_pairs,
                       val_pairs=val_pairs)
