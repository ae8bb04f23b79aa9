"""Counter-based random streams.

All randomness in the package goes through :func:`stream`. A stream is a
Philox generator keyed by ``(seed, *keys)`` so that, for example, trial 17 of
seed 3 always sees the same numbers regardless of how trials are scheduled
across threads.
"""
from __future__ import annotations

import numpy as np


def stream(seed: int, *keys: int) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]]
    ss = np.random.SeedSequence(entropy)
    return np.random.Generator(np.random.Philox(ss))


def stream_key(seed: int, *keys: int) -> tuple[int, ...]:
    # meta.json に記録する系譜 (seed lineage)
    return (int(seed), *[int(k) for k in keys])


# ストリームの用途キー（seed の直後に置く）
NOISE = 1
POSTERIOR = 2
BOOTSTRAP = 3
