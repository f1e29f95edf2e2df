"""Plain-text file formats: loss instances, experiment configs, checkpoints,
and run logs.  Everything is line-oriented and diffable; numbers are written
with 12 significant digits (17 in checkpoints, which must survive a resume
bit-exactly)."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .axe import AxeConfig
from .decoding import DecodeConfig
from .model import AdamState, ToyModelConfig
from .objectives import LossKind, ObjectiveVariant
from .tasks import SyntheticTaskSpec
from .vocab import LogProbMatrix, TargetSequence, Vocabulary

NUM_FMT = "%.12g"
CKPT_FMT = "%.17g"


class ParseError(ValueError):
    """Raised with a 1-based line number for any malformed input file."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


# ---------------------------------------------------------------- instances

def serialize_instance(vocab: Vocabulary, Y: TargetSequence,
                       P: LogProbMatrix) -> str:
    out = io.StringIO()
    out.write(f"vocab {vocab.size}\n")
    for tok in vocab.tokens:
        out.write(tok + "\n")
    out.write(f"target {len(Y)}\n")
    out.write(" ".join(vocab.token_of(int(i)) for i in Y.ids) + "\n")
    out.write(f"logprobs {P.m} {P.V}\n")
    for row in P.values:
        out.write(" ".join(NUM_FMT % x for x in row) + "\n")
    return out.getvalue()


def parse_instance(text: str) -> tuple[Vocabulary, TargetSequence, LogProbMatrix]:
    lines = text.splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines):
            pos += 1
            stripped = lines[pos - 1].strip()
            if stripped and not stripped.startswith("#"):
                return pos, stripped
        raise ParseError(len(lines) + 1, "unexpected end of file")

    no, header = next_line()
    parts = header.split()
    if len(parts) != 2 or parts[0] != "vocab":
        raise ParseError(no, f"expected 'vocab <size>', got {header!r}")
    try:
        size = int(parts[1])
    except ValueError:
        raise ParseError(no, f"vocab size {parts[1]!r} is not an integer") from None
    tokens = []
    for _ in range(size):
        no, tok = next_line()
        tokens.append(tok)
    try:
        vocab = Vocabulary(tuple(tokens))
    except (ValueError, IndexError) as e:
        raise ParseError(no, f"bad vocabulary block: {e}") from None

    no, header = next_line()
    parts = header.split()
    if len(parts) != 2 or parts[0] != "target":
        raise ParseError(no, f"expected 'target <n>', got {header!r}")
    n = int(parts[1])
    no, target_line = next_line()
    words = target_line.split()
    if len(words) != n:
        raise ParseError(no, f"declared {n} target tokens, found {len(words)}")
    try:
        ids = [vocab.id_of(w) for w in words]
    except KeyError as e:
        raise ParseError(no, str(e)) from None
    try:
        Y = TargetSequence(np.array(ids, dtype=np.int64))
    except ValueError as e:
        raise ParseError(no, str(e)) from None

    no, header = next_line()
    parts = header.split()
    if len(parts) != 3 or parts[0] != "logprobs":
        raise ParseError(no, f"expected 'logprobs <m> <V>', got {header!r}")
    m, V = int(parts[1]), int(parts[2])
    if V != vocab.size:
        raise ParseError(no, f"matrix width {V} does not match vocab size {vocab.size}")
    rows = []
    for r in range(m):
        no, row_line = next_line()
        vals = row_line.split()
        if len(vals) != V:
            raise ParseError(no, f"row {r + 1} has {len(vals)} entries, expected {V}")
        try:
            rows.append([float(v) for v in vals])
        except ValueError:
            raise ParseError(no, f"row {r + 1} holds a non-numeric entry") from None
    return vocab, Y, LogProbMatrix(np.array(rows))


# ------------------------------------------------------------------ configs

@dataclass(frozen=True)
class ExperimentConfig:
    task: SyntheticTaskSpec
    model: ToyModelConfig
    loss_kind: LossKind
    axe: AxeConfig
    variant: ObjectiveVariant
    decode: DecodeConfig
    train_count: int = 3000
    val_count: int = 200
    eval_every: int = 500
    out_dir: str = "run"


CONFIG_DEFAULTS = {
    "task": "Copy",
    "source_vocab_size": "12",
    "length_min": "4",
    "length_max": "10",
    "expansion_prob": "0.3",
    "task_seed": "0",
    "d_model": "64",
    "n_layers": "2",
    "max_len": "64",
    "label_smoothing": "0.1",
    "learning_rate": "0.003",
    "adam_beta1": "0.9",
    "adam_beta2": "0.999",
    "adam_eps": "1e-6",
    "weight_decay": "0.0",
    "warmup_steps": "100",
    "steps": "2000",
    "batch_size": "32",
    "seed": "0",
    "loss": "axe",
    "delta": "3",
    "schedule": "antidiagonal",
    "objective": "masks-partial",
    "lambda": "1.05",
    "length_candidates": "5",
    "train_count": "3000",
    "val_count": "200",
    "eval_every": "500",
    "out": "run",
}

_INT_KEYS = {"source_vocab_size", "length_min", "length_max", "task_seed",
             "d_model", "n_layers", "max_len", "warmup_steps", "steps",
             "batch_size", "seed", "length_candidates", "train_count",
             "val_count", "eval_every"}
_FLOAT_KEYS = {"expansion_prob", "label_smoothing", "learning_rate",
               "adam_beta1", "adam_beta2", "adam_eps", "weight_decay",
               "delta", "lambda"}


def parse_config(text: str, overrides: dict[str, str] | None = None,
                 ) -> ExperimentConfig:
    """Key/value lines (one pair per line, '#' comments); unknown keys and
    out-of-range values are rejected naming the field."""
    values = dict(CONFIG_DEFAULTS)
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise ParseError(no, f"expected 'key value', got {line!r}")
        key, val = parts[0], parts[1].strip()
        if key not in values:
            raise ParseError(no, f"unknown configuration key {key!r}")
        values[key] = val
    for key, val in (overrides or {}).items():
        if key not in values:
            raise ValueError(f"unknown configuration key {key!r}")
        values[key] = val

    def conv(key):
        raw = values[key]
        try:
            if key in _INT_KEYS:
                return int(raw)
            if key in _FLOAT_KEYS:
                return float(raw)
        except ValueError:
            raise ValueError(f"field {key!r}: {raw!r} is not a number") from None
        return raw

    try:
        task = SyntheticTaskSpec(kind=conv("task"),
                                 source_vocab_size=conv("source_vocab_size"),
                                 length_range=(conv("length_min"),
                                               conv("length_max")),
                                 expansion_prob=conv("expansion_prob"),
                                 seed=conv("task_seed"))
    except ValueError as e:
        raise ValueError(f"field 'task': {e}") from None
    try:
        model = ToyModelConfig(d_model=conv("d_model"),
                               n_layers=conv("n_layers"),
                               max_len=conv("max_len"),
                               label_smoothing=conv("label_smoothing"),
                               learning_rate=conv("learning_rate"),
                               adam_beta1=conv("adam_beta1"),
                               adam_beta2=conv("adam_beta2"),
                               adam_eps=conv("adam_eps"),
                               weight_decay=conv("weight_decay"),
                               warmup_steps=conv("warmup_steps"),
                               steps=conv("steps"),
                               batch_size=conv("batch_size"),
                               seed=conv("seed"))
    except ValueError as e:
        raise ValueError(f"field 'model': {e}") from None
    loss_raw = conv("loss")
    if loss_raw not in ("axe", "ce"):
        raise ValueError(f"field 'loss': must be 'axe' or 'ce', got {loss_raw!r}")
    try:
        axe = AxeConfig(delta=conv("delta"), schedule=conv("schedule"))
    except ValueError as e:
        raise ValueError(f"field 'delta/schedule': {e}") from None
    try:
        variant = ObjectiveVariant.from_flag(conv("objective"))
    except ValueError as e:
        raise ValueError(f"field 'objective': {e}") from None
    try:
        decode = DecodeConfig(length_multiplier=conv("lambda"),
                              num_length_candidates=conv("length_candidates"),
                              max_len=model.max_len)
    except ValueError as e:
        raise ValueError(f"field 'lambda/length_candidates': {e}") from None
    if task.max_target_length > model.max_len:
        raise ValueError(
            f"field 'max_len': task can emit length "
            f"{task.max_target_length} targets, beyond max_len {model.max_len}")
    return ExperimentConfig(task=task, model=model,
                            loss_kind=LossKind(loss_raw), axe=axe,
                            variant=variant, decode=decode,
                            train_count=conv("train_count"),
                            val_count=conv("val_count"),
                            eval_every=conv("eval_every"),
                            out_dir=conv("out"))


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = [
        f"task {cfg.task.kind}",
        f"source_vocab_size {cfg.task.source_vocab_size}",
        f"length_min {cfg.task.length_range[0]}",
        f"length_max {cfg.task.length_range[1]}",
        f"expansion_prob {NUM_FMT % cfg.task.expansion_prob}",
        f"task_seed {cfg.task.seed}",
        f"d_model {cfg.model.d_model}",
        f"n_layers {cfg.model.n_layers}",
        f"max_len {cfg.model.max_len}",
        f"label_smoothing {NUM_FMT % cfg.model.label_smoothing}",
        f"learning_rate {NUM_FMT % cfg.model.learning_rate}",
        f"adam_beta1 {NUM_FMT % cfg.model.adam_beta1}",
        f"adam_beta2 {NUM_FMT % cfg.model.adam_beta2}",
        f"adam_eps {NUM_FMT % cfg.model.adam_eps}",
        f"weight_decay {NUM_FMT % cfg.model.weight_decay}",
        f"warmup_steps {cfg.model.warmup_steps}",
        f"steps {cfg.model.steps}",
        f"batch_size {cfg.model.batch_size}",
        f"seed {cfg.model.seed}",
        f"loss {cfg.loss_kind.value}",
        f"delta {NUM_FMT % cfg.axe.delta}",
        f"schedule {cfg.axe.schedule}",
        f"objective {cfg.variant.value}",
        f"lambda {NUM_FMT % cfg.decode.length_multiplier}",
        f"length_candidates {cfg.decode.num_length_candidates}",
        f"train_count {cfg.train_count}",
        f"val_count {cfg.val_count}",
        f"eval_every {cfg.eval_every}",
        f"out {cfg.out_dir}",
    ]
    return "\n".join(lines) + "\n"


# -------------------------------------------------------------- checkpoints

def serialize_checkpoint(params: dict, adam: AdamState, step: int,
                         vocab: Vocabulary, op_counts: dict[str, int],
                         totals: tuple[int, int]) -> str:
    out = io.StringIO()
    out.write(f"step {step}\n")
    out.write(f"adam_t {adam.t}\n")
    out.write("op_counts " + " ".join(
        f"{k}={op_counts.get(k, 0)}" for k in sorted(op_counts)) + "\n")
    out.write(f"totals {totals[0]} {totals[1]}\n")
    out.write(f"vocab {vocab.size}\n")
    for tok in vocab.tokens:
        out.write(tok + "\n")
    for section, blob in (("param", params), ("adam_m", adam.m),
                          ("adam_v", adam.v)):
        for name in sorted(blob):
            arr = blob[name]
            shape = " ".join(str(s) for s in arr.shape)
            out.write(f"{section} {name} {shape}\n")
            flat = arr.ravel()
            for start in range(0, flat.size, 8):
                out.write(" ".join(
                    CKPT_FMT % x for x in flat[start:start + 8]) + "\n")
    return out.getvalue()


def parse_checkpoint(text: str):
    lines = text.splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines):
            pos += 1
            stripped = lines[pos - 1].strip()
            if stripped:
                return pos, stripped
        raise ParseError(len(lines) + 1, "unexpected end of checkpoint")

    def expect(keyword):
        no, line = next_line()
        parts = line.split()
        if parts[0] != keyword:
            raise ParseError(no, f"expected {keyword!r} header, got {line!r}")
        return no, parts[1:]

    _, rest = expect("step")
    step = int(rest[0])
    _, rest = expect("adam_t")
    adam_t = int(rest[0])
    _, rest = expect("op_counts")
    op_counts = {}
    for item in rest:
        k, v = item.split("=")
        op_counts[k] = int(v)
    _, rest = expect("totals")
    totals = (int(rest[0]), int(rest[1]))
    no, rest = expect("vocab")
    tokens = []
    for _ in range(int(rest[0])):
        no, tok = next_line()
        tokens.append(tok)
    vocab = Vocabulary(tuple(tokens))

    params: dict[str, np.ndarray] = {}
    adam_m: dict[str, np.ndarray] = {}
    adam_v: dict[str, np.ndarray] = {}
    sections = {"param": params, "adam_m": adam_m, "adam_v": adam_v}
    while True:
        try:
            no, line = next_line()
        except ParseError:
            break
        parts = line.split()
        if parts[0] not in sections:
            raise ParseError(no, f"unknown checkpoint section {parts[0]!r}")
        name = parts[1]
        shape = tuple(int(s) for s in parts[2:])
        count = int(np.prod(shape)) if shape else 1
        vals: list[float] = []
        while len(vals) < count:
            no, line = next_line()
            vals.extend(float(v) for v in line.split())
        if len(vals) != count:
            raise ParseError(no, f"block {name!r} has {len(vals)} values, "
                                 f"expected {count}")
        sections[parts[0]][name] = np.array(vals).reshape(shape)

    adam = AdamState(m=adam_m, v=adam_v, t=adam_t)
    return params, adam, step, vocab, op_counts, totals


# --------------------------------------------------------------------- logs

TRAIN_LOG_HEADER = "step\tloss\tlength_loss\tlr\tskip_target_rate\tskip_prediction_rate"
EVAL_LOG_HEADER = "step\texact_match\ttoken_f1\tcorpus_bleu\trepetition"


def format_train_row(r) -> str:
    return (f"{r.step}\t{r.loss:.6f}\t{r.length_loss:.6f}\t{r.lr:.8f}"
            f"\t{r.skip_target_rate:.6f}\t{r.skip_prediction_rate:.6f}")


def format_eval_row(r) -> str:
    return (f"{r.step}\t{r.exact_match:.6f}\t{r.token_f1:.6f}"
            f"\t{r.corpus_bleu:.4f}\t{r.repetition:.6f}")
