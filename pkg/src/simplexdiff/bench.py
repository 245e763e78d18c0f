"""Sampling-latency measurement: time vs. length and step count, per mode.

Timing wraps the generate call only (model load and tokenization excluded),
one warm-up run is discarded, and each configuration reports mean/std over
at least three trials. Untrained weights are fine here; latency does not
depend on them. Forward-pass budgets are asserted against the model's call
counter while measuring.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .model import EncoderModel
from .sampler import GenerationConfig, generate, generate_block
from .schedule import NoiseSchedule
from .seeding import STREAM_BENCH, derive_rng

MODES = ("full_nar", "block")


@dataclass
class BenchRecord:
    mode: str
    target_len: int
    num_steps: int
    trials: int
    mean_ms: float
    std_ms: float
    forwards: int = 0  # instrumentation; not part of the CSV schema


@dataclass
class BenchSkip:
    mode: str
    target_len: int
    num_steps: int
    reason: str


def _expected_forwards(mode: str, target_len: int, num_steps: int, block_size: int) -> int:
    if mode == "full_nar":
        return num_steps
    return math.ceil(target_len / block_size) * num_steps


def run_bench(lengths, steps, modes, model: EncoderModel, schedule: NoiseSchedule,
              trials: int = 5, seed: int = 0, block_size: int = 25,
              source_len: int = 8) -> tuple[list[BenchRecord], list[BenchSkip]]:
    """Measure every (mode, length, steps) cell; infeasible cells become
    explicit skips with a reason instead of records.
    """
    if trials < 3:
        raise ValueError(f"need trials >= 3 for a std estimate, got {trials}")
    for mode in modes:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r} (expected one of {MODES})")

    V = model.config.vocab_size
    src_rng = derive_rng(seed, STREAM_BENCH, 0)
    source = [int(t) for t in src_rng.integers(5, V, size=source_len)]

    records: list[BenchRecord] = []
    skips: list[BenchSkip] = []
    for mode in modes:
        for target_len in lengths:
            for num_steps in steps:
                needed = source_len + 1 + target_len
                if needed > model.config.max_len:
                    skips.append(BenchSkip(mode, target_len, num_steps,
                                           f"sequence of {needed} exceeds max_len {model.config.max_len}"))
                    continue
                if num_steps > schedule.T_train:
                    skips.append(BenchSkip(mode, target_len, num_steps,
                                           f"{num_steps} steps exceed T_train {schedule.T_train}"))
                    continue
                cfg = GenerationConfig(num_steps=num_steps, max_target_len=target_len,
                                       self_conditioning=True, mode=mode,
                                       block_size=block_size, seed=seed)
                run = generate_block if mode == "block" else generate
                times = []
                expected = _expected_forwards(mode, target_len, num_steps, block_size)
                try:
                    for trial in range(trials + 1):  # first run warms up, then discard
                        rng = derive_rng(seed, STREAM_BENCH, 1 + trial)
                        before = model.forward_calls
                        t0 = time.perf_counter()
                        run(source, model, schedule, cfg, rng)
                        elapsed = time.perf_counter() - t0
                        used = model.forward_calls - before
                        if used != expected:
                            raise RuntimeError(
                                f"{mode} len={target_len} steps={num_steps}: "
                                f"{used} forwards, expected {expected}"
                            )
                        if trial > 0:
                            times.append(elapsed * 1e3)
                except ValueError as e:
                    skips.append(BenchSkip(mode, target_len, num_steps, str(e)))
                    continue
                arr = np.asarray(times)
                records.append(BenchRecord(mode=mode, target_len=int(target_len),
                                           num_steps=int(num_steps), trials=trials,
                                           mean_ms=float(arr.mean()),
                                           std_ms=float(arr.std(ddof=1)),
                                           forwards=expected))
    return records, skips


def emit_csv(records: list[BenchRecord], path) -> None:
    """Rows sorted by (mode, target_len, num_steps); plain comma-separated."""
    if not records:
        raise ValueError("no bench records to write")
    ordered = sorted(records, key=lambda r: (r.mode, r.target_len, r.num_steps))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("mode,target_len,num_steps,trials,mean_ms,std_ms\n")
        for r in ordered:
            fh.write(f"{r.mode},{r.target_len},{r.num_steps},{r.trials},"
                     f"{r.mean_ms:.3f},{r.std_ms:.3f}\n")


def linear_fit_r2(x, y) -> tuple[float, float, float]:
    """Least-squares line y = a*x + b and its r^2."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    a, b = np.polyfit(x, y, 1)
    pred = a * x + b
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(a), float(b), r2
