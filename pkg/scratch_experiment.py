"""Scratch harness for tuning acceptance training configs (not shipped)."""

import argparse
import sys
import time

import numpy as np

from simplexdiff.corpus import synth_task
from simplexdiff.metrics import evaluate_generation, exact_match, rouge_l
from simplexdiff.model import EncoderConfig, EncoderModel
from simplexdiff.sampler import GenerationConfig, generate_batch
from simplexdiff.schedule import NoiseSchedule
from simplexdiff.seeding import STREAM_GENERATE, STREAM_INIT, STREAM_TRAIN, derive_rng
from simplexdiff.trainer import AdamW, Batcher, TrainConfig, training_step


def evaluate(model, sched, data, steps, n_eval, seed=0, self_cond=True):
    test = data.test[:n_eval]
    sources = [ex.source for ex in test]
    refs = [ex.target for ex in test]
    gcfg = GenerationConfig(num_steps=steps, max_target_len=data.target_len,
                            self_conditioning=self_cond, seed=seed)
    rngs = [derive_rng(seed, STREAM_GENERATE, i) for i in range(len(sources))]
    t0 = time.perf_counter()
    outs = generate_batch(sources, model, sched, gcfg, rngs)
    dt = time.perf_counter() - t0
    em = exact_match(outs, refs)
    rl = 100.0 * float(np.mean([rouge_l(h, r) for h, r in zip(outs, refs)]))
    return em, rl, dt


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--task", default="copy")
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--vocab", type=int, default=64)
    ap.add_argument("--len-min", type=int, default=4)
    ap.add_argument("--len-max", type=int, default=12)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--warmup", type=int, default=200)
    ap.add_argument("--steps", type=int, default=3000)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--rho", type=float, default=0.5)
    ap.add_argument("--mode", default="averaged")
    ap.add_argument("--layers", type=int, default=4)
    ap.add_argument("--d-model", type=int, default=128)
    ap.add_argument("--d-ff", type=int, default=512)
    ap.add_argument("--dropout", type=float, default=0.1)
    ap.add_argument("--t-train", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--eval-every", type=int, default=1000)
    ap.add_argument("--eval-steps", type=int, default=100)
    ap.add_argument("--n-eval", type=int, default=200)
    ap.add_argument("--final-evals", default="")
    args = ap.parse_args()

    data = synth_task(args.task, n=args.n, len_range=(args.len_min, args.len_max),
                      vocab_size=args.vocab, seed=args.seed)
    V = len(data.vocab)
    max_len = data.source_len + 1 + data.target_len
    cfg = EncoderConfig(vocab_size=V, layers=args.layers, heads=4, d_model=args.d_model,
                        d_ff=args.d_ff, max_len=max_len + 2, dropout=args.dropout,
                        self_cond_mode=args.mode)
    model = EncoderModel(cfg, rng=derive_rng(args.seed, STREAM_INIT))
    sched = NoiseSchedule(T_train=args.t_train, k=5.0)
    tcfg = TrainConfig(learning_rate=args.lr, warmup_steps=args.warmup,
                       total_steps=args.steps, batch_size=args.batch, rho=args.rho)
    rng = derive_rng(args.seed, STREAM_TRAIN)
    b = Batcher(data.train, data.source_len, data.target_len, tcfg.batch_size, rng)
    opt = AdamW(model.params, weight_decay=tcfg.weight_decay)

    print(f"config: {vars(args)}", flush=True)
    t_start = time.time()
    for step in range(1, args.steps + 1):
        loss = training_step(model, opt, sched, b.next_batch(), tcfg, rng, step)
        if step % 200 == 0:
            print(f"step {step} loss {loss:.4f} wall {time.time()-t_start:.0f}s", flush=True)
        if step % args.eval_every == 0:
            sc = args.mode != "none"
            em, rl, dt = evaluate(model, sched, data, args.eval_steps, args.n_eval,
                                  self_cond=sc)
            print(f"  eval@{step}: steps={args.eval_steps} EM={em:.3f} R-L={rl:.2f} ({dt:.0f}s)",
                  flush=True)
    for spec in args.final_evals.split(","):
        if not spec:
            continue
        st = int(spec)
        sc = args.mode != "none"
        em, rl, dt = evaluate(model, sched, data, st, args.n_eval, self_cond=sc)
        print(f"final eval steps={st}: EM={em:.3f} R-L={rl:.2f} ({dt:.0f}s)", flush=True)
    print(f"total wall: {time.time()-t_start:.0f}s")


if __name__ == "__main__":
    sys.exit(main())
