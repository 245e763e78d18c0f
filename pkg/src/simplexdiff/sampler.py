"""Iterative refinement from prior noise to tokens, fully non-autoregressive.

Each grid step feeds the current noisy simplex (averaged with the previous
step's projected prediction when self-conditioning) through the encoder,
snaps the predicted logits to clean ±k form, and re-noises that estimate to
the next grid time. The final step emits the argmax tokens directly.

A block mode decodes fixed-size windows left to right, appending each
decoded block to the source context — the semi-autoregressive comparison
point. An exact reverse step (no coefficient approximation) is provided as
a verification oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import EOS_ID, PAD_ID
from .model import EncoderModel
from .schedule import NoiseSchedule
from .simplex import project_argmax, sample_prior, self_cond_average
from .tensor import softmax_np


@dataclass
class GenerationConfig:
    num_steps: int = 100
    max_target_len: int = 12
    self_conditioning: bool = True
    mode: str = "full_nar"
    block_size: int = 25
    seed: int = 0

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValueError(f"num_steps must be >= 1, got {self.num_steps}")
        if self.mode not in ("full_nar", "block"):
            raise ValueError(f"mode must be full_nar or block, got {self.mode!r}")
        if self.mode == "block" and self.block_size < 1:
            raise ValueError(f"block_size must be >= 1, got {self.block_size}")
        if self.max_target_len < 1:
            raise ValueError(f"max_target_len must be >= 1, got {self.max_target_len}")


def reverse_step(S_hat: np.ndarray, t_prev, schedule: NoiseSchedule,
                 rng: np.random.Generator) -> np.ndarray:
    """Corrupt the clean estimate back to step t_prev; same map as the
    forward noising: sqrt(abar)*S_hat + sqrt(1-abar)*eps, eps ~ N(0, k^2 I).
    """
    ab = schedule.alpha_bar(t_prev)
    eps = rng.normal(0.0, schedule.k, size=S_hat.shape).astype(S_hat.dtype)
    return np.sqrt(ab).astype(S_hat.dtype) * S_hat + np.sqrt(1.0 - ab).astype(S_hat.dtype) * eps


def recover_noise(S_t: np.ndarray, x0_pred: np.ndarray, t, schedule: NoiseSchedule) -> np.ndarray:
    """Invert the closed-form noising: eps = (S_t - sqrt(abar_t)*x0) / sqrt(1-abar_t)."""
    ab = schedule.alpha_bar(t)
    return (S_t - np.sqrt(ab) * x0_pred) / np.sqrt(1.0 - ab)


def reverse_step_exact(x0_pred: np.ndarray, eps_pred: np.ndarray, t,
                       schedule: NoiseSchedule) -> np.ndarray:
    """The un-approximated one-step reverse update:

        sqrt(abar_{t-1})*x0 - ((alpha_t - abar_t) / (sqrt(alpha_t)*sqrt(1-abar_t)))*eps

    Only used to verify how far the coefficient~1 shortcut strays.
    """
    t = float(t)
    if t < 1 or t > schedule.T_train:
        raise ValueError(f"step {t} outside [1, {schedule.T_train}]")
    ab_prev = schedule.alpha_bar(t - 1)
    ab_t = schedule.alpha_bar(t)
    a_t = schedule.alpha(t)
    coeff = (a_t - ab_t) / (np.sqrt(a_t) * np.sqrt(1.0 - ab_t))
    return np.sqrt(ab_prev) * x0_pred - coeff * eps_pred


def reverse_step_mean(x0_pred: np.ndarray, eps_pred: np.ndarray, t,
                      schedule: NoiseSchedule) -> np.ndarray:
    """Deterministic part of the approximate step, sharing eps with the exact
    form: sqrt(abar_{t-1})*x0 - sqrt(1-abar_{t-1})*eps.
    """
    ab_prev = schedule.alpha_bar(float(t) - 1)
    return np.sqrt(ab_prev) * x0_pred - np.sqrt(1.0 - ab_prev) * eps_pred


def decode_output(tokens) -> list[int]:
    """Cut at the first end token, then drop padding."""
    out = []
    for tok in tokens:
        tok = int(tok)
        if tok == EOS_ID:
            break
        out.append(tok)
    return [t for t in out if t != PAD_ID]


def _reverse_process(src: np.ndarray, src_mask: np.ndarray, length: int,
                     model: EncoderModel, schedule: NoiseSchedule,
                     config: GenerationConfig,
                     rngs: list[np.random.Generator]) -> np.ndarray:
    """Shared refinement loop over a [B, length] target window -> token ids."""
    B = src.shape[0]
    V = model.config.vocab_size
    k = schedule.k
    Tt = schedule.T_train
    mode = model.config.self_cond_mode

    S = np.stack([sample_prior(length, V, k, rng, dtype=model.dtype) for rng in rngs])
    grid = schedule.timestep_grid(config.num_steps)
    prev_proj = None
    S_hat = None
    for i, t in enumerate(grid):
        use_prev = prev_proj if config.self_conditioning else None
        if mode == "original":
            probs = softmax_np(S)
            sc = softmax_np(use_prev) if use_prev is not None else None
            logits = model.forward(src, src_mask, probs, t / Tt, self_cond_probs=sc)
        else:
            probs = self_cond_average(S, use_prev)
            logits = model.forward(src, src_mask, probs, t / Tt)
        S_hat = project_argmax(logits.data, k)
        if i + 1 < len(grid):
            t_prev = grid[i + 1]
            S = np.stack([reverse_step(S_hat[j], t_prev, schedule, rngs[j]) for j in range(B)])
        prev_proj = S_hat
    return np.argmax(S_hat, axis=-1)


def generate(source, model: EncoderModel, schedule: NoiseSchedule,
             config: GenerationConfig, rng: np.random.Generator) -> list[int]:
    """Decode one source; returns token ids with end/padding stripped."""
    raw = generate_batch([list(source)], model, schedule, config, [rng])[0]
    return raw


def generate_batch(sources: list[list[int]], model: EncoderModel,
                   schedule: NoiseSchedule, config: GenerationConfig,
                   rngs: list[np.random.Generator]) -> list[list[int]]:
    """Decode many sources in one batched refinement; one rng per sequence."""
    if len(sources) != len(rngs):
        raise ValueError("need exactly one rng per source sequence")
    if config.mode == "block":
        return [generate_block(src, model, schedule, config, rng)
                for src, rng in zip(sources, rngs)]
    S = max(len(s) for s in sources)
    B = len(sources)
    src = np.full((B, S), PAD_ID, dtype=np.int64)
    mask = np.zeros((B, S), dtype=bool)
    for i, s in enumerate(sources):
        src[i, : len(s)] = s
        mask[i, : len(s)] = True
    tokens = _reverse_process(src, mask, config.max_target_len, model, schedule, config, rngs)
    return [decode_output(row) for row in tokens]


def generate_block(source, model: EncoderModel, schedule: NoiseSchedule,
                   config: GenerationConfig, rng: np.random.Generator) -> list[int]:
    """Left-to-right block decoding: refine one window, append it to the
    context, repeat until max_target_len or an end token shows up.
    """
    context = [int(t) for t in source]
    decoded: list[int] = []
    max_len = model.config.max_len
    while len(decoded) < config.max_target_len:
        window = min(config.block_size, config.max_target_len - len(decoded))
        total = len(context) + 1 + window
        if total > max_len:
            raise ValueError(
                f"block context of {len(context)} tokens + window {window} exceeds max_len {max_len}"
            )
        src = np.asarray([context], dtype=np.int64)
        mask = np.ones((1, len(context)), dtype=bool)
        block = _reverse_process(src, mask, window, model, schedule, config, [rng])[0]
        block = [int(t) for t in block]
        decoded.extend(block)
        context.extend(block)
        if EOS_ID in block:
            break
    return decode_output(decoded)
