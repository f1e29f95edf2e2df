"""Aligned cross entropy: monotonic-alignment loss via dynamic programming.

The DP grid ``A`` has shape (n+1, m+1) for a target of n tokens and m
prediction rows.  ``A[i][j]`` is the minimum accumulated negative
log-likelihood for aligning the first i target tokens with the first j
prediction rows, built from three local operators:

  Align          A[i][j] = A[i-1][j-1] - log P_j(Y_i)
  SkipPrediction A[i][j] = A[i][j-1]   - log P_j(eps)
  SkipTarget     A[i][j] = A[i-1][j]   - delta * log P_j(Y_i)

Boundary cells follow the same recurrences with the literal convention that
the first column charges skipped targets against prediction 1.  Two fill
schedules are provided: a naive row-major loop and an anti-diagonal wavefront
whose cells are mutually independent within a diagonal (and vectorized here);
both produce identical matrices.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .vocab import EPSILON_ID, LogProbMatrix, TargetSequence

ALIGN = "Align"
SKIP_PREDICTION = "SkipPrediction"
SKIP_TARGET = "SkipTarget"

SCHEDULES = ("naive", "antidiagonal")

ORACLE_MAX_SIDE = 7


@dataclass(frozen=True)
class AxeConfig:
    """delta scales the skip-target penalty; schedule picks the fill order."""

    delta: float = 1.0
    schedule: str = "antidiagonal"

    def __post_init__(self):
        if not np.isfinite(self.delta) or self.delta < 0:
            raise ValueError(f"delta must be finite and >= 0, got {self.delta}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")


@dataclass(frozen=True)
class DpMatrix:
    """Accumulator grid of shape (n+1, m+1); values in nats."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return int(self.values.shape[0]) - 1

    @property
    def m(self) -> int:
        return int(self.values.shape[1]) - 1

    @property
    def loss(self) -> float:
        return float(self.values[-1, -1])


@dataclass(frozen=True)
class AxeOp:
    """One backtraced step.  i is the 1-based target index, j the 1-based
    prediction index; SkipPrediction carries no i, SkipTarget's j is the
    duplicated prediction."""

    kind: str
    i: int | None
    j: int | None
    cost: float


@dataclass(frozen=True)
class AlignmentTrace:
    ops: tuple[AxeOp, ...]
    alpha: dict[int, int]
    total_cost: float
    counts: dict[str, int]


@dataclass(frozen=True)
class LossGradient:
    """Sparse d(loss)/d(log P_j(v)) coefficients keyed by (prediction j, token v),
    j 1-based."""

    entries: dict[tuple[int, int], float]

    def to_dense(self, m: int, V: int) -> np.ndarray:
        dense = np.zeros((m, V))
        for (j, v), coeff in self.entries.items():
            dense[j - 1, v] += coeff
        return dense


def _check_instance(Y: TargetSequence, P: LogProbMatrix) -> None:
    bad = np.nonzero(Y.ids >= P.V)[0]
    if bad.size:
        i = int(bad[0])
        raise ValueError(
            f"target position {i + 1} holds id {int(Y.ids[i])}, "
            f"outside vocabulary of size {P.V}")


def _local_costs(Y: TargetSequence, P: LogProbMatrix):
    # neg_tok[i-1, j-1] = -log P_j(Y_i); neg_eps[j-1] = -log P_j(eps)
    neg_tok = -P.values[:, Y.ids].T
    neg_eps = -P.values[:, EPSILON_ID]
    return np.ascontiguousarray(neg_tok), np.ascontiguousarray(neg_eps)


def _fill_boundaries(A: np.ndarray, neg_tok: np.ndarray, neg_eps: np.ndarray,
                     delta: float) -> None:
    n, m = neg_tok.shape
    A[0, 0] = 0.0
    for i in range(1, n + 1):
        A[i, 0] = A[i - 1, 0] + delta * neg_tok[i - 1, 0]
    for j in range(1, m + 1):
        A[0, j] = A[0, j - 1] + neg_eps[j - 1]


def axe_forward_naive(Y: TargetSequence, P: LogProbMatrix,
                      cfg: AxeConfig) -> DpMatrix:
    """Row-major fill of the DP grid."""
    _check_instance(Y, P)
    neg_tok, neg_eps = _local_costs(Y, P)
    n, m = neg_tok.shape
    delta = cfg.delta
    A = np.empty((n + 1, m + 1))
    _fill_boundaries(A, neg_tok, neg_eps, delta)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            align = A[i - 1, j - 1] + neg_tok[i - 1, j - 1]
            skip_pred = A[i, j - 1] + neg_eps[j - 1]
            skip_tgt = A[i - 1, j] + delta * neg_tok[i - 1, j - 1]
            A[i, j] = min(align, skip_pred, skip_tgt)
    return DpMatrix(A)


def axe_forward_antidiagonal(Y: TargetSequence, P: LogProbMatrix,
                             cfg: AxeConfig) -> DpMatrix:
    """Anti-diagonal wavefront fill; cells with i+j=k depend only on the two
    previous diagonals, so each diagonal is evaluated as one vector operation."""
    _check_instance(Y, P)
    neg_tok, neg_eps = _local_costs(Y, P)
    n, m = neg_tok.shape
    delta = cfg.delta
    A = np.empty((n + 1, m + 1))
    _fill_boundaries(A, neg_tok, neg_eps, delta)
    for k in range(2, n + m + 1):
        lo = max(1, k - m)
        hi = min(n, k - 1)
        if lo > hi:
            continue
        ii = np.arange(lo, hi + 1)
        jj = k - ii
        align = A[ii - 1, jj - 1] + neg_tok[ii - 1, jj - 1]
        skip_pred = A[ii, jj - 1] + neg_eps[jj - 1]
        skip_tgt = A[ii - 1, jj] + delta * neg_tok[ii - 1, jj - 1]
        A[ii, jj] = np.minimum(np.minimum(align, skip_pred), skip_tgt)
    return DpMatrix(A)


def axe_forward(Y: TargetSequence, P: LogProbMatrix, cfg: AxeConfig) -> DpMatrix:
    """Fill the DP grid with the schedule selected in ``cfg``."""
    if cfg.schedule == "naive":
        return axe_forward_naive(Y, P, cfg)
    return axe_forward_antidiagonal(Y, P, cfg)


def axe_forward_batch(Y_ids: np.ndarray, P_values: np.ndarray,
                      delta: float) -> np.ndarray:
    """Anti-diagonal fill over a batch of equal-shape instances.

    ``Y_ids`` has shape (B, n), ``P_values`` (B, m, V); returns (B, n+1, m+1).
    Within one diagonal the whole batch is a single vector operation, so the
    number of sequential steps is n+m+1 regardless of batch size.
    """
    Y_ids = np.asarray(Y_ids, dtype=np.int64)
    P_values = np.asarray(P_values, dtype=np.float64)
    B, n = Y_ids.shape
    m = P_values.shape[1]
    # neg_tok[b, i-1, j-1] = -log P_j(Y_i) for instance b
    neg_tok = -np.take_along_axis(P_values, Y_ids[:, None, :], axis=2)
    neg_tok = np.ascontiguousarray(neg_tok.transpose(0, 2, 1))
    neg_eps = -P_values[:, :, EPSILON_ID]
    A = np.empty((B, n + 1, m + 1))
    A[:, 0, 0] = 0.0
    for i in range(1, n + 1):
        A[:, i, 0] = A[:, i - 1, 0] + delta * neg_tok[:, i - 1, 0]
    for j in range(1, m + 1):
        A[:, 0, j] = A[:, 0, j - 1] + neg_eps[:, j - 1]
    for k in range(2, n + m + 1):
        lo = max(1, k - m)
        hi = min(n, k - 1)
        if lo > hi:
            continue
        ii = np.arange(lo, hi + 1)
        jj = k - ii
        align = A[:, ii - 1, jj - 1] + neg_tok[:, ii - 1, jj - 1]
        skip_pred = A[:, ii, jj - 1] + neg_eps[:, jj - 1]
        skip_tgt = A[:, ii - 1, jj] + delta * neg_tok[:, ii - 1, jj - 1]
        A[:, ii, jj] = np.minimum(np.minimum(align, skip_pred), skip_tgt)
    return A


def axe_loss(Y: TargetSequence, P: LogProbMatrix, cfg: AxeConfig) -> float:
    """Total loss in nats: the bottom-right DP cell."""
    return axe_forward(Y, P, cfg).loss


def _trace_from_ops(ops: list[AxeOp]) -> AlignmentTrace:
    alpha: dict[int, int] = {}
    counts = {ALIGN: 0, SKIP_PREDICTION: 0, SKIP_TARGET: 0}
    total = 0.0
    for op in ops:
        counts[op.kind] += 1
        if op.kind in (ALIGN, SKIP_TARGET):
            alpha[op.i] = op.j
        total += op.cost
    return AlignmentTrace(ops=tuple(ops), alpha=alpha, total_cost=total,
                          counts=counts)


def axe_backtrace(A: DpMatrix, Y: TargetSequence, P: LogProbMatrix,
                  cfg: AxeConfig) -> AlignmentTrace:
    """Recover the op path that produced A[n][m].

    Ties are broken with the fixed priority Align > SkipPrediction >
    SkipTarget, so the trace (and therefore the gradient) is deterministic.
    """
    _check_instance(Y, P)
    neg_tok, neg_eps = _local_costs(Y, P)
    n, m = neg_tok.shape
    if A.values.shape != (n + 1, m + 1):
        raise ValueError(
            f"DP matrix shape {A.values.shape} does not match instance "
            f"({n + 1}, {m + 1})")
    delta = cfg.delta
    vals = A.values
    ops: list[AxeOp] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            tok = neg_tok[i - 1, j - 1]
            here = vals[i, j]
            if vals[i - 1, j - 1] + tok == here:
                ops.append(AxeOp(ALIGN, i, j, float(tok)))
                i, j = i - 1, j - 1
            elif vals[i, j - 1] + neg_eps[j - 1] == here:
                ops.append(AxeOp(SKIP_PREDICTION, None, j, float(neg_eps[j - 1])))
                j -= 1
            else:
                ops.append(AxeOp(SKIP_TARGET, i, j, float(delta * tok)))
                i -= 1
        elif j > 0:
            ops.append(AxeOp(SKIP_PREDICTION, None, j, float(neg_eps[j - 1])))
            j -= 1
        else:
            # first column: skipped targets are charged against prediction 1
            ops.append(AxeOp(SKIP_TARGET, i, 1, float(delta * neg_tok[i - 1, 0])))
            i -= 1
    ops.reverse()
    return _trace_from_ops(ops)


def axe_gradient(Y: TargetSequence, P: LogProbMatrix,
                 cfg: AxeConfig) -> tuple[float, LossGradient]:
    """Loss plus its subgradient with respect to each log P_j(v), taken through
    the deterministic backtrace: Align and SkipPrediction contribute -1 to the
    (j, token) they touch, SkipTarget contributes -delta."""
    A = axe_forward(Y, P, cfg)
    trace = axe_backtrace(A, Y, P, cfg)
    entries: dict[tuple[int, int], float] = {}
    for op in trace.ops:
        if op.kind == ALIGN:
            key = (op.j, int(Y.ids[op.i - 1]))
            coeff = -1.0
        elif op.kind == SKIP_PREDICTION:
            key = (op.j, EPSILON_ID)
            coeff = -1.0
        else:
            key = (op.j, int(Y.ids[op.i - 1]))
            coeff = -cfg.delta
        entries[key] = entries.get(key, 0.0) + coeff
    return A.loss, LossGradient(entries=entries)


def min_decision_margin(Y: TargetSequence, P: LogProbMatrix,
                        cfg: AxeConfig) -> float:
    """Smallest best-to-second-best operator gap over the cells the optimal
    path visits.

    Any alternative path within eps of the optimum must merge into the
    backtraced path at one of its cells through a non-chosen operator, so a
    margin above eps certifies the backtrace is unique under cost
    perturbations up to that size.  Cells off the path carry structural
    degeneracies (e.g. swap-order ties in the first column) that cannot
    change the trace and are deliberately ignored.
    """
    Amat = axe_forward(Y, P, cfg)
    A = Amat.values
    trace = axe_backtrace(Amat, Y, P, cfg)
    neg_tok, neg_eps = _local_costs(Y, P)
    margin = np.inf
    i = j = 0
    for op in trace.ops:
        if op.kind == ALIGN:
            i, j = i + 1, j + 1
        elif op.kind == SKIP_PREDICTION:
            j += 1
        else:
            i += 1
        if i == 0 or j == 0:
            continue
        cands = sorted((
            A[i - 1, j - 1] + neg_tok[i - 1, j - 1],
            A[i, j - 1] + neg_eps[j - 1],
            A[i - 1, j] + cfg.delta * neg_tok[i - 1, j - 1],
        ))
        margin = min(margin, cands[1] - cands[0])
    return float(margin)


def _check_oracle_scale(n: int, m: int) -> None:
    if n > ORACLE_MAX_SIDE or m > ORACLE_MAX_SIDE:
        raise ValueError(
            f"brute-force oracle supports n, m <= {ORACLE_MAX_SIDE}, "
            f"got n={n}, m={m}")


def brute_force_paths(Y: TargetSequence, P: LogProbMatrix,
                      cfg: AxeConfig) -> tuple[float, AlignmentTrace]:
    """Exhaustive minimum over every monotone op path from (0,0) to (n,m),
    scored with the literal operator costs (first column charged to
    prediction 1).  Oracle for the DP; only feasible at small sizes."""
    _check_instance(Y, P)
    neg_tok, neg_eps = _local_costs(Y, P)
    n, m = neg_tok.shape
    _check_oracle_scale(n, m)
    delta = cfg.delta

    best_cost = np.inf
    best_ops: tuple[AxeOp, ...] = ()
    stack: list[AxeOp] = []

    def explore(i: int, j: int, cost: float) -> None:
        nonlocal best_cost, best_ops
        if i == n and j == m:
            if cost < best_cost:
                best_cost = cost
                best_ops = tuple(stack)
            return
        if i < n and j < m:
            c = neg_tok[i, j]
            stack.append(AxeOp(ALIGN, i + 1, j + 1, float(c)))
            explore(i + 1, j + 1, cost + c)
            stack.pop()
        if j < m:
            c = neg_eps[j]
            stack.append(AxeOp(SKIP_PREDICTION, None, j + 1, float(c)))
            explore(i, j + 1, cost + c)
            stack.pop()
        if i < n:
            jj = max(j, 1)
            c = delta * neg_tok[i, jj - 1]
            stack.append(AxeOp(SKIP_TARGET, i + 1, jj, float(c)))
            explore(i + 1, j, cost + c)
            stack.pop()

    explore(0, 0, 0.0)
    return float(best_cost), _trace_from_ops(list(best_ops))


def brute_force_alignments_eq2(Y: TargetSequence,
                               P: LogProbMatrix) -> tuple[float, dict[int, int]]:
    """Exhaustive minimum over every monotone alignment map alpha from target
    positions to prediction positions: aligned tokens are charged their
    log-probability, unaligned predictions are charged the blank token.
    Equals the path oracle at delta = 1."""
    _check_instance(Y, P)
    neg_tok, neg_eps = _local_costs(Y, P)
    n, m = neg_tok.shape
    _check_oracle_scale(n, m)

    best_cost = np.inf
    best_alpha: tuple[int, ...] = ()
    for alpha in itertools.combinations_with_replacement(range(1, m + 1), n):
        used = set(alpha)
        cost = 0.0
        for i, a in enumerate(alpha):
            cost += neg_tok[i, a - 1]
        for k in range(1, m + 1):
            if k not in used:
                cost += neg_eps[k - 1]
        if cost < best_cost:
            best_cost = cost
            best_alpha = alpha
    return float(best_cost), {i + 1: a for i, a in enumerate(best_alpha)}


def random_instance(rng: np.random.Generator, n: int, m: int, V: int,
                    spread: float = 2.0) -> tuple[TargetSequence, LogProbMatrix]:
    """Random target ids plus row-normalized log probabilities, for tests and
    the self-test command.  V counts the two reserved ids."""
    if V < 3:
        raise ValueError("need at least one real token besides the reserved ids")
    ids = rng.integers(2, V, size=n)
    logits = spread * rng.standard_normal((m, V))
    hi = logits.max(axis=1, keepdims=True)
    logp = logits - (hi + np.log(np.exp(logits - hi).sum(axis=1, keepdims=True)))
    return TargetSequence(ids), LogProbMatrix(logp)
