"""Training loop: noising, stochastic self-conditioning, masked CE, AdamW.

Each step samples a per-example time step, noises the clean target simplex,
optionally mixes in a detached prediction from one step later (probability
rho, one Bernoulli draw per step), and takes a cross-entropy step over the
entire padded target span, pads included.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .corpus import PAD_ID, PairExample
from .model import EncoderModel, save_checkpoint
from .schedule import NoiseSchedule
from .simplex import add_noise, encode_tokens, project_argmax, self_cond_average
from .tensor import Tape, Tensor, backward, cross_entropy, softmax_np


class TrainingDivergenceError(RuntimeError):
    """Loss left the reals; carries the step where it happened."""


class TruncationError(ValueError):
    """A sequence is longer than its fixed span; refusal is explicit, never silent."""


@dataclass
class TrainConfig:
    learning_rate: float = 3e-5
    warmup_steps: int = 500
    total_steps: int = 10000
    batch_size: int = 32
    rho: float = 0.5
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    seed: int = 0
    log_every: int = 50
    checkpoint_every: int = 0  # 0 disables periodic checkpoints

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must be in [0, 1], got {self.rho}")
        if self.warmup_steps > self.total_steps:
            raise ValueError("warmup_steps cannot exceed total_steps")
        if self.batch_size < 1 or self.total_steps < 1:
            raise ValueError("batch_size and total_steps must be positive")


def lr_at(step: int, config: TrainConfig) -> float:
    """Linear ramp 0 -> lr over warmup, then linear decay to 0 at total_steps."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    lr, w, total = config.learning_rate, config.warmup_steps, config.total_steps
    if w > 0 and step < w:
        return lr * step / w
    if step >= total:
        return 0.0
    return lr * (total - step) / max(total - w, 1)


class AdamW:
    """Decoupled weight decay Adam; decay applies to matrices only."""

    def __init__(self, params: dict[str, Tensor], betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = params
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def _decayed(self, name: str) -> bool:
        return self.params[name].data.ndim >= 2

    def step(self, lr: float) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                raise RuntimeError(f"parameter {name!r} has no gradient; run backward first")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay and self._decayed(name):
                update = update + self.weight_decay * p.data
            p.data -= lr * update

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {"opt.step": np.array([float(self.step_count)], dtype=np.float64)}
        for name in self.params:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        self.step_count = int(tensors["opt.step"][0])
        for name in self.params:
            self.m[name] = tensors[f"opt.m.{name}"].astype(self.m[name].dtype)
            self.v[name] = tensors[f"opt.v.{name}"].astype(self.v[name].dtype)


def clip_global_norm(params: dict[str, Tensor], max_norm: float) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = total**0.5
    if max_norm and norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad *= factor
    return norm


def pad_targets(examples: list[PairExample], fixed_len: int, pad_id: int = PAD_ID):
    """Right-pad every target to fixed_len; the loss mask covers the pads too."""
    B = len(examples)
    targets = np.full((B, fixed_len), pad_id, dtype=np.int64)
    for i, ex in enumerate(examples):
        if len(ex.target) > fixed_len:
            raise TruncationError(
                f"example {i}: target of {len(ex.target)} tokens exceeds fixed span {fixed_len}"
            )
        targets[i, : len(ex.target)] = ex.target
    mask = np.ones((B, fixed_len), dtype=bool)
    return targets, mask


def pad_sources(examples: list[PairExample], fixed_len: int, pad_id: int = PAD_ID):
    """Right-pad sources; mask is False over pads (excluded from attention)."""
    B = len(examples)
    src = np.full((B, fixed_len), pad_id, dtype=np.int64)
    mask = np.zeros((B, fixed_len), dtype=bool)
    for i, ex in enumerate(examples):
        if len(ex.source) > fixed_len:
            raise TruncationError(
                f"example {i}: source of {len(ex.source)} tokens exceeds fixed span {fixed_len}"
            )
        src[i, : len(ex.source)] = ex.source
        mask[i, : len(ex.source)] = True
    return src, mask


def self_cond_active(rng: np.random.Generator, rho: float) -> bool:
    """The per-step Bernoulli that switches the self-condition on."""
    if rho <= 0.0:
        return False
    if rho >= 1.0:
        return True
    return bool(rng.random() < rho)


def training_step(model: EncoderModel, opt: AdamW, schedule: NoiseSchedule,
                  batch, config: TrainConfig, rng: np.random.Generator,
                  step: int) -> float:
    """One optimisation step; returns the scalar loss. Raises on divergence."""
    src, src_mask, targets, tgt_mask = batch
    B, L = targets.shape
    V = model.config.vocab_size
    Tt = schedule.T_train

    t = rng.integers(1, Tt + 1, size=B)
    S0 = encode_tokens(targets, k=schedule.k, vocab_size=V, dtype=model.dtype)
    S_t = add_noise(S0, t, schedule, rng)

    mode = model.config.self_cond_mode
    sc_probs = None
    prev_proj = None
    if mode != "none" and self_cond_active(rng, config.rho):
        # detached estimate from one step later, fresh noise; no dropout so
        # the pass is a pure function of (params, draw) and consumes no rng
        t_next = np.minimum(t + 1, Tt)
        S_next = add_noise(S0, t_next, schedule, rng)
        prev_logits = model.forward(src, src_mask, softmax_np(S_next), t_next / Tt,
                                    training=False)
        prev_proj = project_argmax(prev_logits.data, schedule.k)

    if mode == "original":
        probs_in = softmax_np(S_t)
        sc_probs = softmax_np(prev_proj) if prev_proj is not None else None
    else:
        probs_in = self_cond_average(S_t, prev_proj)

    with Tape():
        logits = model.forward(src, src_mask, probs_in, t / Tt, training=True, rng=rng,
                               self_cond_probs=sc_probs)
        flat = T.reshape(logits, (B * L, V))
        loss = cross_entropy(flat, targets.reshape(-1), tgt_mask.reshape(-1))
    loss_val = float(loss.data)
    if not np.isfinite(loss_val):
        raise TrainingDivergenceError(f"non-finite loss {loss_val} at step {step}")
    backward(loss)

    clip_global_norm(model.params, config.grad_clip)
    opt.step(lr_at(step, config))
    opt.zero_grad()
    return loss_val


class Batcher:
    """Deterministic shuffled batches over pre-padded arrays."""

    def __init__(self, examples: list[PairExample], source_len: int, target_len: int,
                 batch_size: int, rng: np.random.Generator):
        if not examples:
            raise ValueError("cannot train on an empty example list")
        self.src, self.src_mask = pad_sources(examples, source_len)
        self.tgt, self.tgt_mask = pad_targets(examples, target_len)
        self.batch_size = batch_size
        self.rng = rng
        self._order = np.array([], dtype=np.int64)

    def next_batch(self):
        if self._order.size < self.batch_size:
            self._order = np.concatenate([self._order, self.rng.permutation(len(self.tgt))])
        idx, self._order = self._order[: self.batch_size], self._order[self.batch_size :]
        return self.src[idx], self.src_mask[idx], self.tgt[idx], self.tgt_mask[idx]


def train(model: EncoderModel, schedule: NoiseSchedule, examples: list[PairExample],
          config: TrainConfig, source_len: int, target_len: int,
          rng: np.random.Generator, log_path=None, checkpoint_dir=None,
          extra_ckpt_info: dict | None = None, opt: AdamW | None = None,
          start_step: int = 1) -> list[tuple[int, float, float]]:
    """Run steps start_step..total_steps; returns [(step, loss, lr)] history rows.

    Pass an optimizer with restored state plus the stored step to resume a run.
    """
    if opt is None:
        opt = AdamW(model.params, weight_decay=config.weight_decay)
    batcher = Batcher(examples, source_len, target_len, config.batch_size, rng)
    history = []
    log_fh = open(log_path, "a" if start_step > 1 else "w", encoding="utf-8") if log_path else None
    if log_fh and start_step == 1:
        log_fh.write("# step loss lr wall_s\n")
    start = time.monotonic()
    try:
        for step in range(start_step, config.total_steps + 1):
            loss = training_step(model, opt, schedule, batcher.next_batch(), config, rng, step)
            if step % config.log_every == 0 or step == config.total_steps:
                lr = lr_at(step, config)
                wall = time.monotonic() - start
                history.append((step, loss, lr))
                if log_fh:
                    log_fh.write(f"{step} {loss:.6f} {lr:.8g} {wall:.3f}\n")
                    log_fh.flush()
            if checkpoint_dir and config.checkpoint_every and step % config.checkpoint_every == 0:
                _write_ckpt(checkpoint_dir, model, opt, step, source_len, target_len,
                            extra_ckpt_info, name=f"checkpoint_{step:07d}.bin")
        if checkpoint_dir:
            _write_ckpt(checkpoint_dir, model, opt, config.total_steps, source_len,
                        target_len, extra_ckpt_info, name="model.bin", with_opt=False)
    finally:
        if log_fh:
            log_fh.close()
    return history


def _write_ckpt(checkpoint_dir, model, opt, step, source_len, target_len, extra_info,
                name, with_opt=True):
    import os

    extra = {"step": step, "source_len": source_len, "target_len": target_len}
    if extra_info:
        extra.update(extra_info)
    save_checkpoint(
        os.path.join(checkpoint_dir, name), model, extra=extra,
        extra_tensors=opt.state_tensors() if with_opt else None,
    )
