"""Shared instance builders for the test suite."""

from __future__ import annotations

import numpy as np

from axenat.vocab import LogProbMatrix, TargetSequence


def uniform_logprob(m: int, V: int) -> LogProbMatrix:
    return LogProbMatrix(np.full((m, V), -np.log(V)))


def peaked_logprob(V: int, rows: list[dict[int, float]]) -> LogProbMatrix:
    """Each row dict pins probabilities on named token ids; the leftover mass
    is spread uniformly over the remaining ids."""
    out = np.empty((len(rows), V))
    for r, peaks in enumerate(rows):
        rest = (1.0 - sum(peaks.values())) / (V - len(peaks))
        if rest <= 0:
            raise ValueError("peaks leave no mass for the remaining tokens")
        row = np.full(V, rest)
        for tok, p in peaks.items():
            row[tok] = p
        out[r] = np.log(row)
    return LogProbMatrix(out)


def positional_ce(Y: TargetSequence, P: LogProbMatrix) -> float:
    """Plain per-position cross entropy; requires m == n."""
    n = len(Y)
    assert P.m == n
    return float(-P.values[np.arange(n), Y.ids].sum())


def shifted_confusion_instance() -> tuple[TargetSequence, LogProbMatrix]:
    """Five-token instance whose predictions sit one slot to the right of the
    target for the first half of the sentence.

    Prediction 1 is confident blank, predictions 2 and 3 carry targets 1 and 2,
    prediction 3 holds some secondary mass on target 3, and predictions 4 and 5
    are back on target.  The cheapest monotone path is therefore
    SkipPrediction(1), Align(1->2), Align(2->3), SkipTarget(3 at 3),
    Align(4->4), Align(5->5), while position-by-position cross entropy pays
    full price for the shifted half.
    """
    # ids 2..6 are the five sentence tokens; V = 7 with the reserved pair
    Y = TargetSequence(np.arange(2, 7))
    P = peaked_logprob(7, [
        {0: 0.8},          # confident blank
        {2: 0.8},          # target 1, shifted right
        {3: 0.7, 4: 0.2},  # target 2 plus a secondary bump on target 3
        {5: 0.8},
        {6: 0.8},
    ])
    return Y, P
