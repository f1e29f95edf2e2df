"""Masking schemes and training-objective variants.

Three variants differ in what the decoder sees and which rows are scored:

  UnobservedPredictAll   fully masked input, every row scored
  PartialPredictAll      partially masked input, every row scored
  PartialPredictMasks    partially masked input, observed rows replaced by a
                         zero-cost anchor and excluded from the gradient

Both loss kinds (aligned and positional cross entropy) run on a label-smoothed
matrix: each op's target term becomes
-(1 - eps_ls) * log P_j(Y_i) - (eps_ls / V) * sum_v log P_j(v), implemented by
smoothing the whole matrix once.  The anchor override is applied after
smoothing so the sentinel never leaks into other entries.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .axe import (
    ALIGN,
    SKIP_PREDICTION,
    AlignmentTrace,
    AxeConfig,
    axe_backtrace,
    axe_forward,
)
from .vocab import (
    EPSILON_ID,
    MASK_ID,
    NEG_SENTINEL,
    LogProbMatrix,
    MaskedInput,
    TargetSequence,
)


class ObjectiveVariant(enum.Enum):
    UNOBSERVED_PREDICT_ALL = "all-unobserved"
    PARTIAL_PREDICT_ALL = "all-partial"
    PARTIAL_PREDICT_MASKS = "masks-partial"

    @classmethod
    def from_flag(cls, flag: str) -> "ObjectiveVariant":
        for variant in cls:
            if variant.value == flag:
                return variant
        raise ValueError(
            f"unknown objective {flag!r}; choose from "
            f"{[v.value for v in cls]}")


class LossKind(enum.Enum):
    AXE = "axe"
    CROSS_ENTROPY = "ce"


@dataclass(frozen=True)
class MaskingDraw:
    input: MaskedInput
    num_masked: int

    def __post_init__(self):
        if self.num_masked != self.input.num_masked:
            raise ValueError("num_masked does not match the observed flags")


def mask_all(Y: TargetSequence) -> MaskedInput:
    n = len(Y)
    return MaskedInput(ids=np.full(n, MASK_ID, dtype=np.int64),
                       observed=np.zeros(n, dtype=bool))


def mask_partial(Y: TargetSequence, rng_seed) -> MaskingDraw:
    """Mask a uniformly random nonempty subset: the count k is uniform on
    {1..n}, then a size-k subset is drawn by seeded shuffle."""
    rng = np.random.default_rng(rng_seed)
    n = len(Y)
    k = int(rng.integers(1, n + 1))
    masked_positions = rng.permutation(n)[:k]
    ids = Y.ids.copy()
    observed = np.ones(n, dtype=bool)
    ids[masked_positions] = MASK_ID
    observed[masked_positions] = False
    return MaskingDraw(input=MaskedInput(ids=ids, observed=observed),
                       num_masked=k)


def draw_masked_input(Y: TargetSequence, variant: ObjectiveVariant,
                      rng_seed) -> MaskedInput:
    if variant is ObjectiveVariant.UNOBSERVED_PREDICT_ALL:
        return mask_all(Y)
    return mask_partial(Y, rng_seed).input


def apply_observed_override(P: LogProbMatrix,
                            masked: MaskedInput) -> LogProbMatrix:
    """Anchor every observed position: its row gets log-probability 0 on the
    observed token and a large negative sentinel elsewhere, so aligning the
    token at its own position is free while routing anything else (including a
    skipped prediction) through the row is prohibitive.  Anchored rows are
    flagged so validation and gradients leave them alone."""
    if P.m != len(masked):
        raise ValueError(
            f"log-prob matrix has {P.m} rows but the masked input has "
            f"{len(masked)} positions")
    if not masked.observed.any():
        return P
    values = P.values.copy()
    rows = np.nonzero(masked.observed)[0]
    values[rows] = NEG_SENTINEL
    values[rows, masked.ids[rows]] = 0.0
    overridden = P.overridden | masked.observed
    return LogProbMatrix(values, overridden=overridden)


def smooth_log_probs(values: np.ndarray, eps_ls: float) -> np.ndarray:
    """Mix each row's entries toward the row's mean log-probability."""
    if eps_ls == 0.0:
        return values.copy()
    V = values.shape[1]
    return (1.0 - eps_ls) * values + (eps_ls / V) * values.sum(
        axis=1, keepdims=True)


def smooth_grad_chain(grad_smoothed: np.ndarray, eps_ls: float) -> np.ndarray:
    # the smoothing map is linear and its Jacobian is symmetric, so the chain
    # rule applies the same mix to the gradient
    if eps_ls == 0.0:
        return grad_smoothed
    V = grad_smoothed.shape[1]
    return (1.0 - eps_ls) * grad_smoothed + (eps_ls / V) * grad_smoothed.sum(
        axis=1, keepdims=True)


@dataclass(frozen=True)
class ObjectiveResult:
    """Raw (unnormalized) loss in nats plus the gradient with respect to the
    model's log-probabilities; anchored rows carry zero gradient."""

    loss: float
    grad_logp: np.ndarray
    masked: MaskedInput
    trace: AlignmentTrace | None


def _effective_matrix(logp: np.ndarray, masked: MaskedInput,
                      variant: ObjectiveVariant,
                      label_smoothing: float) -> LogProbMatrix:
    smoothed = smooth_log_probs(logp, label_smoothing)
    P = LogProbMatrix(smoothed)
    if variant is ObjectiveVariant.PARTIAL_PREDICT_MASKS:
        P = apply_observed_override(P, masked)
    return P


def sequence_objective(Y: TargetSequence, logp: np.ndarray,
                       masked: MaskedInput, variant: ObjectiveVariant,
                       loss_kind: LossKind, axe_cfg: AxeConfig,
                       label_smoothing: float) -> ObjectiveResult:
    """Score one sequence and return the gradient w.r.t. ``logp``.

    ``logp`` is the model's n x V matrix of normalized log-probabilities; the
    row count must equal the target length (alignment still happens inside the
    aligned loss, which may skip and duplicate rows).
    """
    n = len(Y)
    if logp.shape[0] != n:
        raise ValueError(f"expected {n} prediction rows, got {logp.shape[0]}")
    if len(masked) != n:
        raise ValueError("masked input length does not match the target")
    P = _effective_matrix(logp, masked, variant, label_smoothing)

    grad_eff = np.zeros_like(logp)
    trace = None
    if loss_kind is LossKind.AXE:
        A = axe_forward(Y, P, axe_cfg)
        trace = axe_backtrace(A, Y, P, axe_cfg)
        loss = A.loss
        for op in trace.ops:
            if op.kind == ALIGN:
                grad_eff[op.j - 1, Y.ids[op.i - 1]] -= 1.0
            elif op.kind == SKIP_PREDICTION:
                grad_eff[op.j - 1, EPSILON_ID] -= 1.0
            else:
                grad_eff[op.j - 1, Y.ids[op.i - 1]] -= axe_cfg.delta
    else:
        loss = float(-P.values[np.arange(n), Y.ids].sum())
        grad_eff[np.arange(n), Y.ids] = -1.0

    # anchored rows are constants of the model: no gradient flows through them
    grad_eff[P.overridden] = 0.0
    grad_logp = smooth_grad_chain(grad_eff, label_smoothing)
    grad_logp[P.overridden] = 0.0
    return ObjectiveResult(loss=loss, grad_logp=grad_logp, masked=masked,
                           trace=trace)


def logit_grad_from_logp_grad(grad_logp: np.ndarray,
                              probs: np.ndarray) -> np.ndarray:
    """Chain d(loss)/d(log P) back through the log-softmax:
    d(loss)/d(logit_v) = g_v - P_v * sum_u g_u."""
    row_sums = grad_logp.sum(axis=1, keepdims=True)
    return grad_logp - probs * row_sums
