"""Cosine noise schedule and every coefficient derived from it.

All signal/noise weights come from the continuous squared-cosine curve

    abar(t) = f(t) / f(0),   f(t) = cos(((t/T + s) / (1 + s)) * pi/2)^2

evaluated at real-valued t in [0, T]. Inference with fewer steps re-indexes
through t/T into the same curve instead of sub-sampling a table, so one
trained schedule serves any step count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Cap 1 - alpha_t at this value; only binds at the very last step, where
# abar underflows toward 0 and the per-step ratio would collapse with it.
MAX_BETA = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable schedule; shareable across threads.

    T_train is the step count the model trains against, s the small cosine
    offset, and k the simplex scale that also sets the noise standard
    deviation (noise is drawn from N(0, k^2 I)).
    """

    T_train: int = 5000
    s: float = 0.008
    k: float = 5.0

    def __post_init__(self):
        if self.T_train < 1:
            raise ValueError(f"T_train must be >= 1, got {self.T_train}")
        if not 0.0 <= self.s < 1.0:
            raise ValueError(f"offset s must be in [0, 1), got {self.s}")
        if self.k <= 0.0:
            raise ValueError(f"simplex scale k must be positive, got {self.k}")

    def _f(self, t):
        return np.cos(((t / self.T_train + self.s) / (1.0 + self.s)) * (math.pi / 2.0)) ** 2

    def alpha_bar(self, t):
        """Cumulative signal fraction at (possibly fractional) step t."""
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0) or np.any(t > self.T_train):
            raise ValueError(f"step {t} outside [0, {self.T_train}]")
        out = self._f(t) / self._f(0.0)
        return float(out) if out.ndim == 0 else out

    def alpha(self, t):
        """Per-step retention ratio abar(t)/abar(t-1), floored at 1 - MAX_BETA."""
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 1) or np.any(t > self.T_train):
            raise ValueError(f"step {t} outside [1, {self.T_train}]")
        out = np.maximum(self.alpha_bar(t) / self.alpha_bar(t - 1), 1.0 - MAX_BETA)
        return float(out) if out.ndim == 0 else out

    def approx_coefficient(self, t):
        """sqrt((alpha_t - abar_t) / (1 - abar_t)), the ratio the one-line
        reverse step treats as 1. Near 1 for almost all steps; degrades at
        both ends of the schedule (exactly 0 at t=1, where alpha_1 == abar_1).
        """
        t = np.asarray(t, dtype=np.float64)
        a = self.alpha(t)
        ab = self.alpha_bar(t)
        out = np.sqrt((a - ab) / (1.0 - ab))
        return float(out) if out.ndim == 0 else out

    def timestep_grid(self, num_inference_steps: int) -> list[int]:
        """Strictly decreasing step indices, evenly spaced in t/T.

        Starts at T_train; num_inference_steps == T_train gives every step
        down to 1, smaller counts stride through the same range.
        """
        n = num_inference_steps
        if n < 1 or n > self.T_train:
            raise ValueError(f"num_inference_steps must be in [1, {self.T_train}], got {n}")
        grid = [int(round(self.T_train * i / n)) for i in range(n, 0, -1)]
        assert all(a > b for a, b in zip(grid, grid[1:])), "grid must be strictly decreasing"
        return grid
