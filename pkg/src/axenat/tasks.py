"""Synthetic sequence tasks for the toy harness.

Each generator is deterministic given its seed and produces (source, target)
pairs over a shared vocabulary:

  Copy                 Y = X
  ShiftedCopy          Y = random 0-3 token prefix + X (positional misalignment)
  StochasticExpansion  each source token emits itself or itself + a partner
                       token (length multimodality)
  TwoOrderings         Y is X or X rotated right by one, 50/50 (word-order
                       multimodality)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vocab import SourceSequence, TargetSequence, Vocabulary, build_vocabulary

TASK_KINDS = ("Copy", "ShiftedCopy", "StochasticExpansion", "TwoOrderings")

MAX_PREFIX = 3


@dataclass(frozen=True)
class SyntheticTaskSpec:
    kind: str
    source_vocab_size: int = 12
    length_range: tuple[int, int] = (4, 10)
    expansion_prob: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"kind must be one of {TASK_KINDS}, got {self.kind!r}")
        lo, hi = self.length_range
        if not 1 <= lo <= hi:
            raise ValueError(f"length_range must satisfy 1 <= lo <= hi, got {self.length_range}")
        if self.source_vocab_size < 1:
            raise ValueError("source_vocab_size must be positive")
        if not 0.0 <= self.expansion_prob <= 1.0:
            raise ValueError("expansion_prob must lie in [0, 1]")
        if self.kind == "TwoOrderings" and hi > self.source_vocab_size:
            raise ValueError(
                "TwoOrderings draws distinct tokens, so lengths cannot "
                "exceed source_vocab_size")

    @property
    def max_target_length(self) -> int:
        hi = self.length_range[1]
        if self.kind == "ShiftedCopy":
            return hi + MAX_PREFIX
        if self.kind == "StochasticExpansion":
            return 2 * hi
        return hi


def build_task_vocab(spec: SyntheticTaskSpec) -> Vocabulary:
    """Source words w0.. plus, for the expansion task, one partner token per
    word that only ever appears in targets."""
    words = [f"w{i}" for i in range(spec.source_vocab_size)]
    if spec.kind == "StochasticExpansion":
        words += [f"x{i}" for i in range(spec.source_vocab_size)]
    return build_vocabulary(words)


def generate_task_data(spec: SyntheticTaskSpec, count: int,
                       seed) -> list[tuple[SourceSequence, TargetSequence]]:
    rng = np.random.default_rng(seed)
    lo, hi = spec.length_range
    first = 2  # ids 0/1 are reserved
    n_words = spec.source_vocab_size
    pairs = []
    for _ in range(count):
        n = int(rng.integers(lo, hi + 1))
        if spec.kind == "TwoOrderings":
            # distinct tokens: either ordering is then repeat-free, so any
            # adjacent repetition in model output is a blending artifact
            x = first + rng.permutation(n_words)[:n]
        else:
            x = rng.integers(first, first + n_words, size=n)
        if spec.kind == "Copy":
            y = x.copy()
        elif spec.kind == "ShiftedCopy":
            prefix_len = int(rng.integers(0, MAX_PREFIX + 1))
            prefix = rng.integers(first, first + n_words, size=prefix_len)
            y = np.concatenate([prefix, x])
        elif spec.kind == "StochasticExpansion":
            out = []
            for tok in x:
                out.append(tok)
                if rng.random() < spec.expansion_prob:
                    # partner ids sit directly after the word block
                    out.append(tok + n_words)
            y = np.array(out, dtype=np.int64)
        else:  # TwoOrderings
            y = np.roll(x, 1) if rng.random() < 0.5 else x.copy()
        pairs.append((SourceSequence(x), TargetSequence(y)))
    return pairs
