"""Single-seed randomness: every rng in the system derives from one seed.

The splitting rule is `np.random.SeedSequence([seed, stream, *extra])` with
the stream constants below, so runs are bitwise reproducible and streams
never collide across purposes. Per-sequence sampling streams append the
sequence index: derive_rng(seed, STREAM_GENERATE, index).
"""

from __future__ import annotations

import numpy as np

STREAM_DATA = 0
STREAM_INIT = 1
STREAM_TRAIN = 2
STREAM_GENERATE = 3
STREAM_BENCH = 4


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))
