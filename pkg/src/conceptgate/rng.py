"""Counter-keyed random streams.

Every draw site builds its own generator from (seed, purpose, *counters), so
any part of a run can be replayed without replaying what came before it.
That is what makes checkpoint-resumed training bit-identical to an
uninterrupted run: the noise for epoch e, batch b does not depend on how
many draws happened earlier.
"""

from __future__ import annotations

import numpy as np

# purpose tags; keep distinct so key tuples never collide across uses
INIT = 0      # parameter initialization: (seed, INIT)
SHUFFLE = 1   # epoch shuffling: (seed, SHUFFLE, epoch)
NOISE = 2     # sampler noise: (seed, NOISE, epoch, batch, tensor)

# tensor ids for NOISE keys
TENSOR_HIGH = 0
TENSOR_LOW = 1


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox generator for (seed, *key). Same key, same stream."""
    entropy = (int(seed),) + tuple(int(k) for k in key)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def uniform_open(gen: np.random.Generator, shape) -> np.ndarray:
    """Uniform draws constrained to the open interval (0, 1).

    `Generator.random` can return exactly 0.0; logistic noise needs both
    log(u) and log(1-u) finite, so pin the tails.
    """
    u = gen.random(shape)
    return np.clip(u, 1e-12, 1.0 - 1e-12)
