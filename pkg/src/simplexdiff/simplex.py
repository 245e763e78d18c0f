"""Simplex-space machinery: k-logit encoding, noising, projection, mixing.

A sequence lives here as a plain [..., L, V] float array of logits over the
vocabulary. A "clean" sequence has +k at exactly one index per row and -k
everywhere else; anything the diffusion touches is unconstrained real.
All functions are pure and take an explicit rng, so they are deterministic
under a fixed seed and thread-safe as long as rngs are not shared.
"""

from __future__ import annotations

import numpy as np

from .schedule import NoiseSchedule
from .tensor import softmax_np


def encode_tokens(tokens, k: float, vocab_size: int, dtype=np.float32) -> np.ndarray:
    """Map token ids to the scaled-logit form: +k at the id, -k elsewhere."""
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise ValueError(f"token id outside vocabulary of size {vocab_size}")
    out = np.full(ids.shape + (vocab_size,), -k, dtype=dtype)
    np.put_along_axis(out, ids[..., None], k, axis=-1)
    return out


def add_noise(S0: np.ndarray, t, schedule: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    """Jump the clean sequence straight to step t:
    sqrt(abar_t)*S0 + sqrt(1-abar_t)*eps with eps ~ N(0, k^2 I).

    t may be a scalar or one value per leading batch entry.
    """
    ab = np.asarray(schedule.alpha_bar(t), dtype=S0.dtype)
    if ab.ndim:  # per-example t: align for broadcasting over [B, L, V]
        ab = ab.reshape(ab.shape + (1,) * (S0.ndim - ab.ndim))
    eps = rng.normal(0.0, schedule.k, size=S0.shape).astype(S0.dtype)
    return np.sqrt(ab) * S0 + np.sqrt(1.0 - ab) * eps


def project_argmax(S: np.ndarray, k: float) -> np.ndarray:
    """Snap each row back to clean form: +k at the argmax, -k elsewhere.

    np.argmax resolves ties to the lowest index, which is the tie rule here.
    """
    ids = np.argmax(S, axis=-1)
    out = np.full(S.shape, -k, dtype=S.dtype)
    np.put_along_axis(out, ids[..., None], k, axis=-1)
    return out


def probs_to_embedding(p: np.ndarray, E: np.ndarray) -> np.ndarray:
    """Expected word embedding under each row's distribution: h = p @ E."""
    sums = p.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=1e-5):
        worst = float(np.abs(sums - 1.0).max())
        raise ValueError(f"probability rows must sum to 1 (worst deviation {worst:.2e})")
    return p @ E


def self_cond_average(S_t: np.ndarray, S_prev_pred: np.ndarray | None) -> np.ndarray:
    """Average the current and previous-prediction simplex probabilities.

    With no previous prediction (the zeroed self-condition branch) this is
    just softmax(S_t); otherwise 0.5*(softmax(S_t) + softmax(S_prev_pred)),
    still a valid distribution per row.
    """
    p = softmax_np(S_t)
    if S_prev_pred is None:
        return p
    if S_prev_pred.shape != S_t.shape:
        raise ValueError(f"self-condition shape {S_prev_pred.shape} != state shape {S_t.shape}")
    return 0.5 * (p + softmax_np(S_prev_pred))


def sample_prior(
    length: int, vocab_size: int, k: float, rng: np.random.Generator, dtype=np.float32
) -> np.ndarray:
    """Draw the all-noise starting state: i.i.d. N(0, k^2) logits."""
    if length < 1 or vocab_size < 1:
        raise ValueError(f"need length >= 1 and vocab_size >= 1, got {length}, {vocab_size}")
    return rng.normal(0.0, k, size=(length, vocab_size)).astype(dtype)
