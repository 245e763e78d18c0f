"""Command-line surface: train, generate, eval, bench, synth.

Every command exits non-zero on failure and prints a single line to stderr
of the form `error: <Kind>: <message>`, where Kind is the exception class.
Output directories resolve under $SIMPLEXDIFF_OUT when given a relative
path. All randomness in a command derives from one seed (see seeding.py).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .bench import emit_csv, run_bench
from .config import ConfigError, OUT_ROOT_ENV, RunConfig, apply_overrides, load_config
from .corpus import IngestionError, Vocab, build_vocab, load_pairs, synth_task, write_pairs_tsv
from .metrics import evaluate_classification, evaluate_generation
from .model import EncoderConfig, EncoderModel, load_checkpoint, model_from_checkpoint
from .sampler import GenerationConfig, generate_batch
from .schedule import NoiseSchedule
from .seeding import STREAM_GENERATE, STREAM_INIT, STREAM_TRAIN, derive_rng
from .trainer import AdamW, TrainConfig, train


class CompatibilityError(ValueError):
    """Checkpoint and supplied resources disagree (e.g. vocabulary size)."""


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    apply_overrides(cfg, args.set or [])
    out_dir = cfg.out_dir()
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.resolved.ini"), "w", encoding="utf-8") as fh:
        fh.write(cfg.dump())

    data = cfg.section("data")
    if not data["train_path"]:
        raise ConfigError("data.train_path is required for training")
    pairs = load_pairs(data["train_path"], data["format"])
    if not pairs:
        raise IngestionError(f"{data['train_path']}: no examples")

    if data["vocab_path"]:
        vocab = Vocab.load(data["vocab_path"])
    else:
        lines = [ex.raw_source for ex in pairs] + [ex.raw_target for ex in pairs]
        vocab = build_vocab(lines, max_size=data["vocab_max_size"],
                            min_freq=data["vocab_min_freq"])
    vocab.save(os.path.join(out_dir, "vocab.txt"))
    for ex in pairs:
        ex.tokenize(vocab)

    source_len = data["source_len"] or max(len(ex.source) for ex in pairs)
    target_len = data["target_len"] or max(len(ex.target) for ex in pairs)

    mcfg = EncoderConfig(vocab_size=len(vocab), **cfg.section("model"))
    if source_len + 1 + target_len > mcfg.max_len:
        raise ConfigError(
            f"source_len {source_len} + sep + target_len {target_len} exceeds model.max_len {mcfg.max_len}"
        )
    sched_args = cfg.section("schedule")
    schedule = NoiseSchedule(T_train=sched_args["t_train"], s=sched_args["s"], k=sched_args["k"])
    seed = cfg.get("run", "seed")
    tcfg = TrainConfig(seed=seed, **cfg.section("train"))

    opt = None
    start_step = 1
    if args.resume:
        model, extra = model_from_checkpoint(args.resume)
        if model.config != mcfg:
            raise CompatibilityError(
                f"checkpoint config {model.config} does not match configured model {mcfg}"
            )
        _, tensors = load_checkpoint(args.resume)
        opt = AdamW(model.params, weight_decay=tcfg.weight_decay)
        if "opt.step" not in tensors:
            raise CompatibilityError(f"{args.resume} carries no optimizer state to resume from")
        opt.load_state_tensors(tensors)
        start_step = int(extra.get("step", 0)) + 1
    else:
        model = EncoderModel(mcfg, rng=derive_rng(seed, STREAM_INIT))

    log_path = os.path.join(out_dir, "metrics.log")
    history = train(model, schedule, pairs, tcfg, source_len, target_len,
                    rng=derive_rng(seed, STREAM_TRAIN), log_path=log_path,
                    checkpoint_dir=out_dir,
                    extra_ckpt_info={"schedule": sched_args, "seed": seed},
                    opt=opt, start_step=start_step)

    from .plots import loss_curve_figure

    loss_curve_figure(log_path, os.path.join(out_dir, "loss.png"))
    if history:
        print(f"trained to step {history[-1][0]}, final loss {history[-1][1]:.4f}")
    print(f"checkpoint: {os.path.join(out_dir, 'model.bin')}")
    return 0


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def _read_sources(path) -> list[str]:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [line.rstrip("\n") for line in fh]
    except OSError as e:
        raise IngestionError(f"{path}: {e}") from e
    # tsv inputs are fine: the first field is the source
    return [line.split("\t", 1)[0] for line in lines if line.strip()]


def cmd_generate(args) -> int:
    model, extra = model_from_checkpoint(args.checkpoint)
    vocab = Vocab.load(args.vocab)
    if len(vocab) != model.config.vocab_size:
        raise CompatibilityError(
            f"vocabulary of {len(vocab)} tokens does not match checkpoint vocab_size "
            f"{model.config.vocab_size}"
        )
    sched_info = extra.get("schedule", {})
    schedule = NoiseSchedule(T_train=int(sched_info.get("t_train", 5000)),
                             s=float(sched_info.get("s", 0.008)),
                             k=float(sched_info.get("k", 5.0)))
    max_target_len = args.max_target_len or int(extra.get("target_len", 0))
    if max_target_len <= 0:
        raise ConfigError("no --max-target-len given and the checkpoint stores none")
    gcfg = GenerationConfig(num_steps=args.steps, max_target_len=max_target_len,
                            self_conditioning=not args.no_self_cond, mode=args.mode,
                            block_size=args.block_size, seed=args.seed)

    sources = _read_sources(args.input)
    records = []
    for chunk_start in range(0, len(sources), args.batch_size):
        chunk = sources[chunk_start : chunk_start + args.batch_size]
        ids = [vocab.encode(text) for text in chunk]
        rngs = [derive_rng(args.seed, STREAM_GENERATE, chunk_start + j) for j in range(len(chunk))]
        t0 = time.perf_counter()
        outs = generate_batch(ids, model, schedule, gcfg, rngs)
        wall_ms = (time.perf_counter() - t0) * 1e3 / len(chunk)  # amortized per example
        for text, out in zip(chunk, outs):
            records.append({
                "source": text,
                "prediction": vocab.decode(out),
                "steps": args.steps,
                "seed": args.seed,
                "wall_ms": round(wall_ms, 3),
            })
    with open(args.out, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    print(f"wrote {len(records)} predictions to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _read_predictions(path) -> list[str]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.lstrip().startswith("{"):
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as e:
                    raise IngestionError(f"{path}:{lineno}: bad JSON ({e.msg})") from e
                if "prediction" not in rec:
                    raise IngestionError(f"{path}:{lineno}: record missing 'prediction'")
                out.append(str(rec["prediction"]))
            else:
                out.append(line)
    return out


def _read_references(path) -> list[str]:
    name = str(path)
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if name.endswith(".jsonl"):
                rec = json.loads(line)
                if "target" not in rec:
                    raise IngestionError(f"{path}:{lineno}: record missing 'target'")
                out.append(str(rec["target"]))
            elif name.endswith(".tsv"):
                if "\t" not in line:
                    raise IngestionError(f"{path}:{lineno}: expected source<TAB>target")
                out.append(line.split("\t", 1)[1])
            else:
                out.append(line)
    return out


def cmd_eval(args) -> int:
    preds = _read_predictions(args.predictions)
    refs = _read_references(args.references)
    if len(preds) != len(refs):
        raise ValueError(f"alignment error: {len(preds)} predictions vs {len(refs)} references")
    hyp_tokens = [p.split() for p in preds]
    ref_tokens = [r.split() for r in refs]
    if args.task == "generation":
        report = evaluate_generation(hyp_tokens, ref_tokens)
    else:
        report = evaluate_classification(hyp_tokens, ref_tokens)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
        figure = args.figure or os.path.splitext(args.out)[0] + ".png"
        from .plots import metrics_bar_figure

        metrics_bar_figure(report.metrics, figure, title=f"{args.task} evaluation")
    print(report.format_table())
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise ConfigError(f"expected a comma-separated list of integers, got {text!r}") from e


def cmd_bench(args) -> int:
    lengths = _int_list(args.lengths)
    steps = _int_list(args.steps)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    if not lengths or not steps or not modes:
        raise ConfigError("bench needs non-empty --lengths, --steps and --modes")

    max_len = args.max_len or (args.source_len + 1 + max(lengths))
    mcfg = EncoderConfig(vocab_size=args.vocab_size, layers=args.layers, heads=args.heads,
                         d_model=args.d_model, d_ff=args.d_ff, max_len=max_len,
                         dropout=0.0, self_cond_mode="averaged")
    model = EncoderModel(mcfg, rng=derive_rng(args.seed, STREAM_INIT))
    schedule = NoiseSchedule(T_train=args.t_train, k=5.0)

    records, skips = run_bench(lengths, steps, modes, model, schedule, trials=args.trials,
                               seed=args.seed, block_size=args.block_size,
                               source_len=args.source_len)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "bench.csv")
    emit_csv(records, csv_path)
    from .plots import latency_figure

    latency_figure(records, os.path.join(args.out, "bench.png"))
    for skip in skips:
        print(f"skipped {skip.mode} len={skip.target_len} steps={skip.num_steps}: {skip.reason}")
    print(f"wrote {len(records)} records to {csv_path}")
    return 0


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    data = synth_task(args.task, n=args.n, len_range=(args.len_min, args.len_max),
                      vocab_size=args.vocab_size, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    for split in ("train", "valid", "test"):
        write_pairs_tsv(os.path.join(args.out, f"{split}.tsv"), data.split(split))
    data.vocab.save(os.path.join(args.out, "vocab.txt"))
    print(f"{args.task}: {len(data.train)}/{len(data.valid)}/{len(data.test)} examples, "
          f"vocab {len(data.vocab)}, source_len {data.source_len}, target_len {data.target_len}")
    return 0


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simplexdiff",
        description="Non-autoregressive text diffusion on the vocabulary logit simplex.",
        epilog=f"Relative output directories resolve under ${OUT_ROOT_ENV} when it is set.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True, help="INI config path")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a config value (repeatable)")
    p.add_argument("--resume", help="checkpoint with optimizer state to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="decode predictions for a file of sources")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--input", required=True, help="one source per line (tsv: first field)")
    p.add_argument("--out", required=True, help="JSON-lines predictions path")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--max-target-len", type=int, default=0,
                   help="0 = the span stored in the checkpoint")
    p.add_argument("--mode", choices=["full_nar", "block"], default="full_nar")
    p.add_argument("--block-size", type=int, default=25)
    p.add_argument("--no-self-cond", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=64)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="score predictions against references")
    p.add_argument("--predictions", required=True, help="JSON-lines or plain text")
    p.add_argument("--references", required=True, help="plain text, .tsv or .jsonl")
    p.add_argument("--task", choices=["generation", "classification"], default="generation")
    p.add_argument("--out", help="write the report JSON here (figure lands beside it)")
    p.add_argument("--figure", help="explicit figure path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="measure sampling latency into a CSV + figure")
    p.add_argument("--lengths", default="25,50,100,200")
    p.add_argument("--steps", default="10,100")
    p.add_argument("--modes", default="full_nar,block")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--block-size", type=int, default=25)
    p.add_argument("--vocab-size", type=int, default=256)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--d-model", type=int, default=128)
    p.add_argument("--d-ff", type=int, default=512)
    p.add_argument("--max-len", type=int, default=0, help="0 = fit the longest length")
    p.add_argument("--t-train", type=int, default=5000)
    p.add_argument("--source-len", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="bench_out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="emit a synthetic dataset as tsv files")
    p.add_argument("--task", choices=["copy", "reverse", "sort", "parity_label"], required=True)
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--len-min", type=int, default=4)
    p.add_argument("--len-max", type=int, default=12)
    p.add_argument("--vocab-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # single-line, machine-parseable failure reason
        msg = " ".join(str(e).split())
        print(f"error: {type(e).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
