"""Figure rendering for the report paths: latency curves, loss curves, metric bars.

Figures land next to their delimited outputs (bench CSV, train metrics log,
eval report) as PNG files. Uses the Agg backend; nothing here opens a window.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bench import BenchRecord, linear_fit_r2


def latency_figure(records: list[BenchRecord], path) -> None:
    """Two panels: time vs. generated length per (mode, steps), and time vs.
    step count for full-NAR at the longest measured length, with its fit."""
    if not records:
        raise ValueError("no bench records to plot")
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))

    ax = axes[0]
    groups: dict[tuple[str, int], list[BenchRecord]] = {}
    for r in records:
        groups.setdefault((r.mode, r.num_steps), []).append(r)
    for (mode, steps), rs in sorted(groups.items()):
        rs = sorted(rs, key=lambda r: r.target_len)
        xs = [r.target_len for r in rs]
        ys = [r.mean_ms for r in rs]
        es = [r.std_ms for r in rs]
        ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label=f"{mode}, {steps} steps")
    ax.set_xlabel("generated tokens")
    ax.set_ylabel("wall time (ms)")
    ax.set_title("decode latency vs. length")
    ax.legend(fontsize=8)

    ax = axes[1]
    nar = [r for r in records if r.mode == "full_nar"]
    if nar:
        longest = max(r.target_len for r in nar)
        series = sorted((r for r in nar if r.target_len == longest), key=lambda r: r.num_steps)
        if len(series) >= 2:
            xs = [r.num_steps for r in series]
            ys = [r.mean_ms for r in series]
            a, b, r2 = linear_fit_r2(xs, ys)
            grid = np.linspace(min(xs), max(xs), 50)
            ax.plot(grid, a * grid + b, "--", color="gray", label=f"fit, r²={r2:.4f}")
            ax.plot(xs, ys, "o", label=f"full_nar, {longest} tokens")
            ax.legend(fontsize=8)
        ax.set_xlabel("diffusion steps")
        ax.set_ylabel("wall time (ms)")
        ax.set_title("full-NAR latency vs. steps")

    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def loss_curve_figure(log_path, path) -> None:
    """Loss and learning rate over training steps, read from the metrics log."""
    steps, losses, lrs = [], [], []
    with open(log_path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            parts = line.split()
            steps.append(int(parts[0]))
            losses.append(float(parts[1]))
            lrs.append(float(parts[2]))
    if not steps:
        raise ValueError(f"{log_path}: no metric rows to plot")
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, losses, color="tab:blue", label="loss")
    ax.set_xlabel("step")
    ax.set_ylabel("cross-entropy loss", color="tab:blue")
    ax.set_yscale("log")
    twin = ax.twinx()
    twin.plot(steps, lrs, color="tab:orange", alpha=0.6, label="lr")
    twin.set_ylabel("learning rate", color="tab:orange")
    ax.set_title("training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def metrics_bar_figure(metrics: dict[str, float], path, title: str = "evaluation") -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    names = list(metrics)
    values = [metrics[n] for n in names]
    ax.bar(names, values, color="tab:blue")
    for i, v in enumerate(values):
        ax.text(i, v, f"{v:.2f}", ha="center", va="bottom", fontsize=8)
    ax.set_ylabel("score")
    ax.set_title(title)
    plt.setp(ax.get_xticklabels(), rotation=20, ha="right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
