"""Vocabulary, sequence, and log-probability containers shared by every module.

The blank token ``<eps>`` and the mask token ``<mask>`` always occupy ids 0
and 1, so file formats and task generators can rely on fixed reserved ids.
All containers are immutable after construction (arrays are made read-only)
and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPSILON_TOKEN = "<eps>"
MASK_TOKEN = "<mask>"
EPSILON_ID = 0
MASK_ID = 1

# An overridden row stores this for every token except the anchored one.
NEG_SENTINEL = -1e9


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token inventory with the two reserved entries at ids 0 and 1."""

    tokens: tuple[str, ...]
    epsilon_id: int = EPSILON_ID
    mask_id: int = MASK_ID

    def __post_init__(self):
        if len(self.tokens) != len(set(self.tokens)):
            raise ValueError("vocabulary tokens are not unique")
        if self.tokens[self.epsilon_id] != EPSILON_TOKEN:
            raise ValueError(f"token {self.epsilon_id} must be {EPSILON_TOKEN!r}")
        if self.tokens[self.mask_id] != MASK_TOKEN:
            raise ValueError(f"token {self.mask_id} must be {MASK_TOKEN!r}")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise KeyError(f"unknown token {token!r}") from None

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < self.size:
            raise IndexError(f"token id {token_id} out of range 0..{self.size - 1}")
        return self.tokens[token_id]


def build_vocabulary(tokens: list[str] | tuple[str, ...]) -> Vocabulary:
    """Build a vocabulary with ``<eps>`` and ``<mask>`` prepended at ids 0 and 1.

    ``tokens`` must be non-empty, unique, and must not contain the reserved
    names themselves.
    """
    if len(tokens) == 0:
        raise ValueError("empty vocabulary")
    seen = set()
    for t in tokens:
        if t in (EPSILON_TOKEN, MASK_TOKEN):
            raise ValueError(f"reserved token {t!r} may not appear in the input")
        if t in seen:
            raise ValueError(f"duplicate token {t!r}")
        seen.add(t)
    return Vocabulary(tokens=(EPSILON_TOKEN, MASK_TOKEN, *tokens))


def _frozen_ids(ids, *, name: str) -> np.ndarray:
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d id sequence")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TargetSequence:
    """Gold token ids; never contains the blank or mask token."""

    ids: np.ndarray

    def __post_init__(self):
        arr = _frozen_ids(self.ids, name="target")
        if np.any(arr < 2):
            bad = int(np.argmax(arr < 2))
            raise ValueError(f"target position {bad} holds reserved id {int(arr[bad])}")
        object.__setattr__(self, "ids", arr)

    def __len__(self) -> int:
        return int(self.ids.size)


@dataclass(frozen=True)
class SourceSequence:
    """Source token ids; no blank or mask token."""

    ids: np.ndarray

    def __post_init__(self):
        arr = _frozen_ids(self.ids, name="source")
        if np.any(arr < 2):
            bad = int(np.argmax(arr < 2))
            raise ValueError(f"source position {bad} holds reserved id {int(arr[bad])}")
        object.__setattr__(self, "ids", arr)

    def __len__(self) -> int:
        return int(self.ids.size)


@dataclass(frozen=True)
class MaskedInput:
    """Partially observed target: observed positions carry the gold id,
    unobserved ones carry the mask id."""

    ids: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        ids = _frozen_ids(self.ids, name="masked input")
        obs = np.asarray(self.observed, dtype=bool)
        if obs.shape != ids.shape:
            raise ValueError("observed flags must match the id sequence length")
        obs.setflags(write=False)
        if np.any((ids == MASK_ID) == obs):
            bad = int(np.argmax((ids == MASK_ID) == obs))
            raise ValueError(f"position {bad}: mask id and observed flag disagree")
        if np.any(obs & (ids < 2)):
            raise ValueError("observed positions must carry real token ids")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "observed", obs)

    def __len__(self) -> int:
        return int(self.ids.size)

    @property
    def num_masked(self) -> int:
        return int(np.count_nonzero(~self.observed))


@dataclass(frozen=True)
class LogProbMatrix:
    """m rows of natural-log token distributions over a vocabulary of size V.

    Rows replaced by the observed-token override are flagged ``overridden``
    and exempt from the row-normalization check.
    """

    values: np.ndarray
    overridden: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] == 0 or vals.shape[1] == 0:
            raise ValueError("log-prob matrix must be 2-d and non-empty")
        if not np.all(np.isfinite(vals)):
            raise ValueError("log-prob matrix must be finite (use a large negative "
                             "sentinel instead of -inf)")
        vals.setflags(write=False)
        ov = self.overridden
        if ov is None:
            ov = np.zeros(vals.shape[0], dtype=bool)
        else:
            ov = np.asarray(ov, dtype=bool)
            if ov.shape != (vals.shape[0],):
                raise ValueError("overridden flags must have one entry per row")
        ov.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "overridden", ov)

    @property
    def m(self) -> int:
        return int(self.values.shape[0])

    @property
    def V(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True)
class LogProbReport:
    """Row-by-row validation outcome for a LogProbMatrix."""

    ok: bool
    row_residuals: np.ndarray      # |logsumexp| per row, 0.0 for overridden rows
    max_positive_entry: float      # max over entries of max(value, 0)
    overridden: np.ndarray

    NORMALIZATION_TOL = 1e-4
    POSITIVE_TOL = 1e-6


def _logsumexp_rows(values: np.ndarray) -> np.ndarray:
    hi = values.max(axis=1, keepdims=True)
    return (hi + np.log(np.exp(values - hi).sum(axis=1, keepdims=True))).ravel()


def validate_logprob_matrix(P: LogProbMatrix) -> LogProbReport:
    """Report per-row normalization residuals and the largest positive entry.

    Passes iff every entry is <= 1e-6 and every non-overridden row's
    log-sum-exp is 0 within 1e-4.
    """
    residuals = np.abs(_logsumexp_rows(P.values))
    residuals = np.where(P.overridden, 0.0, residuals)
    max_pos = float(np.maximum(P.values, 0.0).max())
    ok = bool(np.all(residuals <= LogProbReport.NORMALIZATION_TOL)
              and max_pos <= LogProbReport.POSITIVE_TOL)
    residuals.setflags(write=False)
    return LogProbReport(ok=ok, row_residuals=residuals,
                         max_positive_entry=max_pos, overridden=P.overridden)


def encode_tokens(vocab: Vocabulary, tokens: list[str]) -> np.ndarray:
    return np.array([vocab.id_of(t) for t in tokens], dtype=np.int64)


def decode_ids(vocab: Vocabulary, ids) -> list[str]:
    return [vocab.token_of(int(i)) for i in ids]
