"""Command-line front end.

Subcommands: loss, align, gradcheck, train, decode, report, selftest.
Exit codes: 0 success, 1 usage or unparseable input, 2 semantic failure
(tie detected, tolerance exceeded, selftest mismatch, diverged run).
All file formats are plain text and line-oriented; see the format notes in
each subcommand's --help.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .axe import (ALIGN, SKIP_PREDICTION, SKIP_TARGET, AxeConfig,
                  axe_backtrace, axe_forward, axe_gradient,
                  brute_force_alignments_eq2, brute_force_paths,
                  min_decision_margin, random_instance)
from .decoding import DecodeConfig, decode
from .instance_io import (EVAL_LOG_HEADER, TRAIN_LOG_HEADER, ExperimentConfig,
                          ParseError, format_eval_row, format_train_row,
                          parse_checkpoint, parse_config, parse_instance,
                          serialize_checkpoint, serialize_config)
from .metrics import (bucketed_quality, position_confidence_profile,
                      skip_op_rates)
from .model import ToyModelConfig
from .training import TrainState, evaluate, make_datasets, train
from .vocab import LogProbMatrix

TIE_MARGIN = 1e-3
GRADCHECK_TOL = 1e-4


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the contract reserves 2 for
    semantic failures, so route usage problems to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def _fail(code: int, message: str):
    sys.stderr.write(f"error: {message}\n")
    sys.exit(code)


def _read_text(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as e:
        _fail(1, f"cannot read {path}: {e.strerror}")


def _load_instance(path: str):
    try:
        return parse_instance(_read_text(path))
    except (ParseError, ValueError) as e:
        _fail(1, f"{path}: {e}")


def _op_table(ops) -> list[str]:
    lines = ["op\ti\tj\tcost"]
    for op in ops:
        i = "-" if op.i is None else str(op.i)
        j = "-" if op.j is None else str(op.j)
        lines.append(f"{op.kind}\t{i}\t{j}\t{op.cost:.9f}")
    return lines


# ------------------------------------------------------------- subcommands

def cmd_loss(args) -> int:
    vocab, Y, P = _load_instance(args.instance)
    cfg = AxeConfig(delta=args.delta, schedule=args.schedule)
    A = axe_forward(Y, P, cfg)
    trace = axe_backtrace(A, Y, P, cfg)
    print(f"loss {A.loss:.9f}")
    print("ops " + " ".join(f"{k}={trace.counts[k]}"
                            for k in (ALIGN, SKIP_PREDICTION, SKIP_TARGET)))
    for line in _op_table(trace.ops):
        print(line)
    return 0


def cmd_align(args) -> int:
    vocab, Y, P = _load_instance(args.instance)
    cfg = AxeConfig(delta=args.delta, schedule=args.schedule)
    A = axe_forward(Y, P, cfg)
    trace = axe_backtrace(A, Y, P, cfg)
    for line in _op_table(trace.ops):
        print(line)
    print(f"total {trace.total_cost:.9f}")
    return 0


def cmd_gradcheck(args) -> int:
    vocab, Y, P = _load_instance(args.instance)
    cfg = AxeConfig(delta=args.delta, schedule=args.schedule)
    margin = min_decision_margin(Y, P, cfg)
    if margin <= TIE_MARGIN:
        print(f"margin {margin:.9g}")
        _fail(2, "non-unique optimum")
    _, grad = axe_gradient(Y, P, cfg)
    analytic = grad.to_dense(P.m, P.V)
    eps = args.eps
    worst = 0.0
    base = P.values
    for j in range(P.m):
        for v in range(P.V):
            up = base.copy()
            up[j, v] += eps
            hi = axe_forward(Y, LogProbMatrix(up), cfg).loss
            down = base.copy()
            down[j, v] -= eps
            lo = axe_forward(Y, LogProbMatrix(down), cfg).loss
            fd = (hi - lo) / (2.0 * eps)
            err = abs(fd - analytic[j, v]) / max(abs(analytic[j, v]), 1.0)
            worst = max(worst, err)
    print(f"margin {margin:.9g}")
    print(f"max_rel_err {worst:.9g}")
    if worst >= GRADCHECK_TOL:
        _fail(2, f"gradient mismatch: max relative error {worst:.3g}")
    return 0


def _resolve_config(args) -> ExperimentConfig:
    overrides = {}
    if getattr(args, "delta", None) is not None:
        overrides["delta"] = repr(args.delta)
    if getattr(args, "lam", None) is not None:
        overrides["lambda"] = repr(args.lam)
    if getattr(args, "length_candidates", None) is not None:
        overrides["length_candidates"] = str(args.length_candidates)
    if getattr(args, "objective", None) is not None:
        overrides["objective"] = args.objective
    if getattr(args, "schedule_opt", None) is not None:
        overrides["schedule"] = args.schedule_opt
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    if getattr(args, "out", None) is not None:
        overrides["out"] = args.out
    try:
        return parse_config(_read_text(args.config), overrides)
    except (ParseError, ValueError) as e:
        _fail(1, f"{args.config}: {e}")


def _write(path: str, text: str, append: bool = False):
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        fh.write(text)


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = os.path.join(out_dir, "checkpoint.txt")

    resume_state = None
    if args.resume:
        if not os.path.exists(ckpt_path):
            _fail(1, f"cannot resume: missing {ckpt_path}")
        try:
            params, adam, step, vocab, op_counts, totals = parse_checkpoint(
                _read_text(ckpt_path))
        except (ParseError, ValueError) as e:
            _fail(1, f"{ckpt_path}: {e}")
        resume_state = TrainState(params=params, adam=adam, step=step,
                                  op_counts=op_counts,
                                  total_targets=totals[0],
                                  total_predictions=totals[1])
        if resume_state.step >= cfg.model.steps:
            _fail(1, f"cannot resume: checkpoint is already at step "
                     f"{resume_state.step} of {cfg.model.steps}; raise "
                     f"steps to extend the run")

    try:
        result = train(cfg.task, cfg.model, cfg.loss_kind, cfg.variant,
                       cfg.axe, cfg.decode, train_count=cfg.train_count,
                       val_count=cfg.val_count, eval_every=cfg.eval_every,
                       resume=resume_state)
    except FloatingPointError as e:
        _fail(2, str(e))
    except ValueError as e:
        _fail(1, str(e))

    _write(os.path.join(out_dir, "config.txt"), serialize_config(cfg))
    appending = args.resume
    train_rows = [format_train_row(r) for r in result.steps_log]
    eval_rows = [format_eval_row(r) for r in result.evals_log]
    if not appending:
        train_rows.insert(0, TRAIN_LOG_HEADER)
        eval_rows.insert(0, EVAL_LOG_HEADER)
    _write(os.path.join(out_dir, "train_log.tsv"),
           "\n".join(train_rows) + "\n", append=appending)
    _write(os.path.join(out_dir, "eval_log.tsv"),
           "\n".join(eval_rows) + "\n", append=appending)

    state = result.state
    _write(ckpt_path, serialize_checkpoint(
        state.params, state.adam, state.step, result.vocab, state.op_counts,
        (state.total_targets, state.total_predictions)))

    _, decodes = evaluate(state, cfg.model, cfg.decode, result.val_pairs)
    lines = [" ".join(result.vocab.token_of(t) for t in d.tokens)
             for d in decodes]
    _write(os.path.join(out_dir, "val_decodes.txt"), "\n".join(lines) + "\n")

    final_eval = result.evals_log[-1]
    print(f"done step {state.step} loss {result.steps_log[-1].loss:.6f} "
          f"exact_match {final_eval.exact_match:.6f}")
    return 0


def _model_config_from_params(params: dict) -> ToyModelConfig:
    n_layers = sum(1 for k in params if k.endswith(".w1"))
    return ToyModelConfig(d_model=int(params["src_emb"].shape[1]),
                          n_layers=n_layers,
                          max_len=int(params["pos_tgt"].shape[0]))


def cmd_decode(args) -> int:
    try:
        params, adam, step, vocab, _, _ = parse_checkpoint(
            _read_text(args.checkpoint))
    except (ParseError, ValueError) as e:
        _fail(1, f"{args.checkpoint}: {e}")
    model_cfg = _model_config_from_params(params)
    dec = DecodeConfig(length_multiplier=args.lam,
                       num_length_candidates=args.length_candidates,
                       max_len=model_cfg.max_len)
    out_lines = []
    for no, raw in enumerate(_read_text(args.sources).splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            ids = np.array([vocab.id_of(w) for w in line.split()],
                           dtype=np.int64)
        except KeyError as e:
            _fail(1, f"{args.sources}: line {no}: {e}")
        if ids.size > model_cfg.max_len:
            _fail(1, f"{args.sources}: line {no}: source longer than "
                     f"max_len {model_cfg.max_len}")
        res = decode(params, model_cfg, ids, dec)
        out_lines.append(" ".join(vocab.token_of(t) for t in res.tokens))
    text = "\n".join(out_lines) + "\n"
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _load_run(run_dir: str):
    cfg_path = os.path.join(run_dir, "config.txt")
    ckpt_path = os.path.join(run_dir, "checkpoint.txt")
    for p in (cfg_path, ckpt_path):
        if not os.path.exists(p):
            _fail(1, f"missing {p}")
    try:
        cfg = parse_config(_read_text(cfg_path))
    except (ParseError, ValueError) as e:
        _fail(1, f"{cfg_path}: {e}")
    try:
        params, adam, step, vocab, op_counts, totals = parse_checkpoint(
            _read_text(ckpt_path))
    except (ParseError, ValueError) as e:
        _fail(1, f"{ckpt_path}: {e}")
    state = TrainState(params=params, adam=adam, step=step,
                       op_counts=op_counts, total_targets=totals[0],
                       total_predictions=totals[1])
    return cfg, state, vocab


def _run_report(run_dir: str) -> dict:
    cfg, state, vocab = _load_run(run_dir)
    _, val_pairs = make_datasets(cfg.task, cfg.train_count, cfg.val_count)
    quality, decodes = evaluate(state, cfg.model, cfg.decode, val_pairs)
    refs = [tuple(int(i) for i in Y.ids) for _, Y in val_pairs]
    ref_lens = [len(r) for r in refs]
    profile = position_confidence_profile(decodes, ref_lens)
    st_rate, sp_rate = skip_op_rates(state.op_counts, state.total_targets,
                                     state.total_predictions)
    rates = {"skip_target_rate": st_rate, "skip_prediction_rate": sp_rate}
    buckets = bucketed_quality([d.tokens for d in decodes], refs)
    return {"dir": run_dir, "loss": cfg.loss_kind.value,
            "objective": cfg.variant.value, "task": cfg.task.kind,
            "quality": quality, "profile": profile, "rates": rates,
            "buckets": buckets}


def _profile_cells(profile: dict, split: str) -> list[str]:
    arr = profile[split]
    return ["nan" if np.isnan(x) else f"{x:.4f}" for x in arr]


def cmd_report(args) -> int:
    reports = [_run_report(d) for d in args.run_dirs]
    lines = []
    tsv = ["run\tloss\ttask\texact_match\ttoken_f1\tcorpus_bleu\trepetition"
           "\tskip_target_rate\tskip_prediction_rate"]
    for r in reports:
        q, rates = r["quality"], r["rates"]
        lines.append(f"run {r['dir']}")
        lines.append(f"  loss_kind {r['loss']}  objective {r['objective']}"
                     f"  task {r['task']}")
        lines.append(f"  exact_match {q['exact_match']:.4f}  token_f1 "
                     f"{q['token_f1']:.4f}  corpus_bleu {q['corpus_bleu']:.2f}")
        lines.append(f"  repetition {q['repetition']:.4f}")
        lines.append(f"  skip_target_rate {rates['skip_target_rate']:.4f}  "
                     f"skip_prediction_rate {rates['skip_prediction_rate']:.4f}")
        offsets = " ".join(str(o) for o in range(-3, 4))
        lines.append(f"  confidence offsets: {offsets}")
        for split in ("all", "short", "long"):
            cells = " ".join(_profile_cells(r["profile"], split))
            lines.append(f"  confidence {split}: {cells}")
        for label, metrics in r["buckets"].items():
            lines.append(f"  bucket {label}: exact_match "
                         f"{metrics['exact_match']:.4f} token_f1 "
                         f"{metrics['token_f1']:.4f} corpus_bleu "
                         f"{metrics['corpus_bleu']:.2f}")
        tsv.append(f"{r['dir']}\t{r['loss']}\t{r['task']}"
                   f"\t{q['exact_match']:.6f}\t{q['token_f1']:.6f}"
                   f"\t{q['corpus_bleu']:.4f}\t{q['repetition']:.6f}"
                   f"\t{rates['skip_target_rate']:.6f}"
                   f"\t{rates['skip_prediction_rate']:.6f}")

    axe_runs = [r for r in reports if r["loss"] == "axe"]
    ce_runs = [r for r in reports if r["loss"] == "ce"]
    if axe_runs and ce_runs:
        a = min(r["quality"]["repetition"] for r in axe_runs)
        c = min(r["quality"]["repetition"] for r in ce_runs)
        verdict = "PASS" if a < c else "FAIL"
        lines.append(f"AXE repetition < CE repetition: {verdict} "
                     f"({a:.4f} vs {c:.4f})")
        a_st = max(r["rates"]["skip_target_rate"] for r in axe_runs)
        lines.append(f"AXE uses skip ops: "
                     f"{'PASS' if a_st > 0 else 'FAIL'} "
                     f"(skip_target_rate {a_st:.4f})")
    text = "\n".join(lines) + "\n" + "\n".join(tsv) + "\n"
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_selftest(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst_paths = 0.0
    worst_eq2 = 0.0
    for k in range(args.count):
        n = int(rng.integers(1, 7))
        m = int(rng.integers(1, 7))
        V = int(rng.integers(3, 9))
        delta = float(rng.choice([0.5, 1.0, 2.0, 5.0]))
        Y, P = random_instance(rng, n, m, V)
        cfg = AxeConfig(delta=delta)
        naive = axe_forward(Y, P, AxeConfig(delta=delta, schedule="naive"))
        wave = axe_forward(Y, P, cfg)
        if not np.array_equal(naive.values, wave.values):
            _fail(2, f"selftest: schedules disagree on instance {k}")
        oracle, _ = brute_force_paths(Y, P, cfg)
        worst_paths = max(worst_paths, abs(wave.loss - oracle))
        if worst_paths > 1e-9:
            _fail(2, f"selftest: DP {wave.loss!r} vs oracle {oracle!r} "
                     f"on instance {k}")
        one = axe_forward(Y, P, AxeConfig(delta=1.0)).loss
        eq2, _ = brute_force_alignments_eq2(Y, P)
        worst_eq2 = max(worst_eq2, abs(one - eq2))
        if worst_eq2 > 1e-9:
            _fail(2, f"selftest: delta=1 loss {one!r} vs alignment-sum "
                     f"oracle {eq2!r} on instance {k}")
    print(f"selftest ok: {args.count} instances, "
          f"max |dp - path oracle| {worst_paths:.3g}, "
          f"max |dp - alignment oracle| {worst_eq2:.3g}, "
          f"schedules identical")
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> _Parser:
    parser = _Parser(prog="axenat",
                     description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    def add_instance_flags(p, with_eps=False):
        p.add_argument("instance", help="instance file: 'vocab <V>' header + "
                       "V token lines, 'target <n>' + one token line, "
                       "'logprobs <m> <V>' + m rows of V log-probabilities")
        p.add_argument("--delta", type=float, default=1.0,
                       help="skip-target penalty multiplier (default 1.0)")
        p.add_argument("--schedule", choices=("naive", "antidiagonal"),
                       default="antidiagonal", help="DP fill order")
        if with_eps:
            p.add_argument("--eps", type=float, default=1e-5,
                           help="finite-difference step (default 1e-5)")

    p = sub.add_parser("loss", help="print the loss and its op decomposition")
    add_instance_flags(p)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("align", help="print the optimal alignment as a table")
    add_instance_flags(p)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("gradcheck",
                       help="compare analytic and finite-difference gradients")
    add_instance_flags(p, with_eps=True)
    p.set_defaults(func=cmd_gradcheck)

    def add_train_flags(p):
        p.add_argument("config", help="experiment config: 'key value' lines; "
                       "keys: task, source_vocab_size, length_min/max, "
                       "expansion_prob, task_seed, d_model, n_layers, "
                       "max_len, label_smoothing, learning_rate, adam_*, "
                       "weight_decay, warmup_steps, steps, batch_size, seed, "
                       "loss, delta, schedule, objective, lambda, "
                       "length_candidates, train_count, val_count, "
                       "eval_every, out")
        p.add_argument("--delta", type=float, default=None)
        p.add_argument("--lambda", dest="lam", type=float, default=None)
        p.add_argument("--length-candidates", type=int, default=None)
        p.add_argument("--objective", choices=("all-unobserved", "all-partial",
                                               "masks-partial"), default=None)
        p.add_argument("--schedule", dest="schedule_opt",
                       choices=("naive", "antidiagonal"), default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--resume", action="store_true",
                       help="continue from the checkpoint in the output dir")

    p = sub.add_parser("train", help="train a toy model per a config file")
    add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="decode source lines with a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("sources", help="file of space-separated source tokens, "
                   "one sequence per line")
    p.add_argument("--lambda", dest="lam", type=float, default=1.05,
                   help="length multiplier (default 1.05)")
    p.add_argument("--length-candidates", type=int, default=5)
    p.add_argument("--out", default=None, help="write decodes here instead "
                   "of stdout")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("report", help="comparative report over finished runs")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("selftest", help="run the oracle-equivalence suite")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
