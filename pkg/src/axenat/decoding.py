"""Single-pass non-autoregressive decoding with length candidates.

The length head proposes the top-L lengths, each is inflated by the length
multiplier, and every candidate is decoded in one fully-masked forward pass.
Candidates are ranked by joint log-likelihood: the length head's
log-probability of the candidate plus the chosen-token log-probabilities
over its raw (pre-strip) positions. Ranking by mean token log-probability
alone is length-blind, and a short candidate whose every slot is sharp then
beats the true length whenever the model is confident -- the joint score
lets the length head veto that exactly when it knows the answer. The
winner's blank tokens are removed after selection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ToyModelConfig, forward, length_logits_from_source
from .vocab import EPSILON_ID, MASK_ID


@dataclass(frozen=True)
class DecodeConfig:
    length_multiplier: float = 1.05
    num_length_candidates: int = 5
    max_len: int = 64

    def __post_init__(self):
        if not np.isfinite(self.length_multiplier) or self.length_multiplier < 1.0:
            raise ValueError("length multiplier must be finite and >= 1")
        if not 1 <= self.num_length_candidates <= self.max_len:
            raise ValueError("need 1 <= num_length_candidates <= max_len")


@dataclass(frozen=True)
class DecodeResult:
    tokens: tuple[int, ...]            # blank-free output ids
    raw_length: int                    # decoded length before stripping
    chosen_length_candidate: int       # length-head candidate that won
    chosen_logprobs: np.ndarray        # chosen-token log-prob per raw position
    candidate_scores: tuple[float, ...]
    raw_ids: np.ndarray                # argmax ids per raw position
    kept_positions: np.ndarray         # raw indices of the surviving tokens
    logp: np.ndarray                   # full distribution of the winning pass

    def __post_init__(self):
        assert MASK_ID not in self.tokens and EPSILON_ID not in self.tokens
        assert len(self.tokens) <= self.raw_length


def scale_length(length: int, multiplier: float, max_len: int) -> int:
    """Nearest integer with ties rounded up, clamped to [1, max_len]."""
    scaled = int(np.floor(multiplier * length + 0.5))
    return min(max(scaled, 1), max_len)


def strip_epsilon(ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop blanks, preserving the order (and raw indices) of survivors."""
    kept = np.nonzero(ids != EPSILON_ID)[0]
    return ids[kept], kept


def decode(params: dict, model_cfg: ToyModelConfig, src_ids: np.ndarray,
           cfg: DecodeConfig) -> DecodeResult:
    length_logits = length_logits_from_source(params, model_cfg, src_ids)
    shifted = length_logits - length_logits.max()
    length_logprobs = shifted - np.log(np.exp(shifted).sum())
    order = np.argsort(-length_logits, kind="stable")
    candidates = [int(idx) + 1 for idx in order[:cfg.num_length_candidates]]

    best = None
    scores = []
    for cand in candidates:
        raw_len = scale_length(cand, cfg.length_multiplier, cfg.max_len)
        input_ids = np.full(raw_len, MASK_ID, dtype=np.int64)
        logp, _, _ = forward(params, model_cfg, src_ids, input_ids)
        # the mask token is an input symbol, never an output one
        choosable = logp.copy()
        choosable[:, MASK_ID] = -np.inf
        raw_ids = np.argmax(choosable, axis=1)
        chosen = logp[np.arange(raw_len), raw_ids]
        score = float(length_logprobs[cand - 1] + chosen.sum())
        scores.append(score)
        if best is None or score > best[0]:
            best = (score, cand, raw_ids, chosen, logp)

    _, cand, raw_ids, chosen, logp = best
    tokens, kept = strip_epsilon(raw_ids)
    return DecodeResult(tokens=tuple(int(t) for t in tokens),
                        raw_length=int(raw_ids.size),
                        chosen_length_candidate=cand,
                        chosen_logprobs=chosen,
                        candidate_scores=tuple(scores),
                        raw_ids=raw_ids,
                        kept_positions=kept,
                        logp=logp)
