"""Keyed random streams for every randomized stage.

All randomness in the pipeline flows through `stream`, a counter-based
generator (Philox) keyed by a master seed plus integer key parts. Streams
with distinct keys are independent, and a given key yields the same values
on any machine and under any evaluation order, which is what makes the
encoders and pooling weights reproducible and safe to materialize in
parallel.
"""

from __future__ import annotations

import numpy as np

# Key-domain tags so different stages can never collide on a key.
DOMAIN_POOL = 1
DOMAIN_RNN = 2
DOMAIN_SPLIT = 3
DOMAIN_SOLVER = 4


def stream(master_seed: int, *key: int) -> np.random.Generator:
    """Deterministic generator for (master_seed, *key)."""
    seq = np.random.SeedSequence(
        entropy=int(master_seed), spawn_key=tuple(int(k) for k in key)
    )
    return np.random.Generator(np.random.Philox(seq))


def uniform_weights(
    shape: tuple[int, ...],
    master_seed: int,
    *key: int,
    low: float = -0.1,
    high: float = 0.1,
) -> np.ndarray:
    """float32 i.i.d. uniform draws on [low, high) from the keyed stream."""
    gen = stream(master_seed, *key)
    r = gen.random(size=shape, dtype=np.float32)
    return r * np.float32(high - low) + np.float32(low)
