"""Corpus statistics: repetition, positional confidence profiles, skip-op
rates, and sequence quality (exact match, token F1, smoothed corpus BLEU)."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .axe import SKIP_PREDICTION, SKIP_TARGET
from .decoding import DecodeResult

BLEU_ORDER = 4
DEFAULT_BUCKET_EDGES = (10, 20, 30, 40, 50)

SHORT_REFERENCE_LIMIT = 10   # profile split: short means reference < 10
LONG_REFERENCE_LIMIT = 30    # long means reference > 30


def repetition_rate(outputs: list[tuple[int, ...]]) -> float:
    """Adjacent equal pairs over total adjacent pairs, micro-averaged."""
    if not outputs:
        raise ValueError("repetition rate of an empty corpus is undefined")
    repeats = sum(sum(a == b for a, b in zip(seq, seq[1:])) for seq in outputs)
    pairs = sum(max(len(seq) - 1, 0) for seq in outputs)
    return repeats / pairs if pairs else 0.0


def position_confidence_profile(
        decodes: list[DecodeResult], reference_lengths: list[int],
        max_offset: int = 3) -> dict[str, np.ndarray]:
    """Mean probability each surviving token receives at relative offsets
    -max_offset..+max_offset around the position that produced it, split by
    reference length (short < 10, long > 30, plus the whole corpus)."""
    width = 2 * max_offset + 1
    sums = {"all": np.zeros(width), "short": np.zeros(width),
            "long": np.zeros(width)}
    counts = {k: np.zeros(width) for k in sums}
    for res, ref_len in zip(decodes, reference_lengths):
        groups = ["all"]
        if ref_len < SHORT_REFERENCE_LIMIT:
            groups.append("short")
        elif ref_len > LONG_REFERENCE_LIMIT:
            groups.append("long")
        probs = np.exp(res.logp)
        for t in res.kept_positions:
            tok = res.raw_ids[t]
            for o in range(-max_offset, max_offset + 1):
                pos = t + o
                if 0 <= pos < res.raw_length:
                    for g in groups:
                        sums[g][o + max_offset] += probs[pos, tok]
                        counts[g][o + max_offset] += 1
    out = {}
    for g in sums:
        with np.errstate(invalid="ignore"):
            out[g] = np.where(counts[g] > 0, sums[g] / np.maximum(counts[g], 1),
                              np.nan)
    return out


def skip_op_rates(op_counts: dict[str, int], total_targets: int,
                  total_predictions: int) -> tuple[float, float]:
    """Skip-target ops per target token and skip-prediction ops per
    prediction row."""
    if total_targets <= 0 or total_predictions <= 0:
        raise ValueError("rates need at least one target and one prediction")
    st = op_counts.get(SKIP_TARGET, 0) / total_targets
    sp = op_counts.get(SKIP_PREDICTION, 0) / total_predictions
    return st, sp


def _ngram_counts(seq: tuple[int, ...], order: int) -> Counter:
    return Counter(tuple(seq[i:i + order]) for i in range(len(seq) - order + 1))


def corpus_bleu(outputs: list[tuple[int, ...]],
                references: list[tuple[int, ...]]) -> float:
    """4-gram corpus BLEU on the 0-100 scale: add-1 smoothing on the n>1
    precisions, brevity penalty exp(1 - r/c) when the output is short."""
    if len(outputs) != len(references):
        raise ValueError("outputs and references differ in length")
    out_len = sum(len(o) for o in outputs)
    ref_len = sum(len(r) for r in references)
    if out_len == 0:
        return 0.0
    log_precisions = []
    for order in range(1, BLEU_ORDER + 1):
        matched = 0
        total = 0
        for out, ref in zip(outputs, references):
            counts = _ngram_counts(out, order)
            ref_counts = _ngram_counts(ref, order)
            total += sum(counts.values())
            matched += sum(min(c, ref_counts.get(g, 0))
                           for g, c in counts.items())
        if order == 1:
            if matched == 0:
                return 0.0
            log_precisions.append(math.log(matched / total))
        else:
            log_precisions.append(math.log((matched + 1) / (total + 1)))
    bp = 1.0 if out_len >= ref_len else math.exp(1.0 - ref_len / out_len)
    return 100.0 * bp * math.exp(sum(log_precisions) / BLEU_ORDER)


def _token_f1(out: tuple[int, ...], ref: tuple[int, ...]) -> float:
    if not out and not ref:
        return 1.0
    if not out or not ref:
        return 0.0
    overlap = sum((Counter(out) & Counter(ref)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(out)
    recall = overlap / len(ref)
    return 2 * precision * recall / (precision + recall)


def sequence_quality(outputs: list[tuple[int, ...]],
                     references: list[tuple[int, ...]]) -> dict[str, float]:
    if len(outputs) != len(references):
        raise ValueError("outputs and references differ in length")
    if not outputs:
        raise ValueError("quality of an empty corpus is undefined")
    exact = sum(tuple(o) == tuple(r)
                for o, r in zip(outputs, references)) / len(outputs)
    f1 = sum(_token_f1(tuple(o), tuple(r))
             for o, r in zip(outputs, references)) / len(outputs)
    return {"exact_match": exact,
            "token_f1": f1,
            "corpus_bleu": corpus_bleu([tuple(o) for o in outputs],
                                       [tuple(r) for r in references])}


def bucket_label(length: int, edges: tuple[int, ...]) -> str:
    lo = 1
    for edge in edges:
        if length <= edge:
            return f"{lo}-{edge}"
        lo = edge + 1
    return f"{edges[-1] + 1}+"


def bucketed_quality(outputs: list[tuple[int, ...]],
                     references: list[tuple[int, ...]],
                     bucket_edges: tuple[int, ...] = DEFAULT_BUCKET_EDGES,
                     ) -> dict[str, dict[str, float]]:
    """Quality metrics per reference-length bucket; empty buckets are simply
    absent from the result."""
    if len(outputs) != len(references):
        raise ValueError("outputs and references differ in length")
    groups: dict[str, tuple[list, list]] = {}
    for out, ref in zip(outputs, references):
        label = bucket_label(len(ref), bucket_edges)
        groups.setdefault(label, ([], []))
        groups[label][0].append(out)
        groups[label][1].append(ref)
    return {label: sequence_quality(outs, refs)
            for label, (outs, refs) in groups.items()}


@dataclass(frozen=True)
class AnalysisReport:
    repetition_rate: float
    skip_target_rate: float | None
    skip_prediction_rate: float | None
    confidence_profile: dict[str, np.ndarray]
    quality: dict[str, float]
    bucketed: dict[str, dict[str, float]]
    max_offset: int = 3
    extras: dict[str, float] = field(default_factory=dict)
