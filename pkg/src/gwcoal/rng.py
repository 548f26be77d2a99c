"""Per-replicate random streams keyed by (master seed, stream, replicate index)."""
from __future__ import annotations

import numpy as np

# stream ids keep unrelated experiments sharing a seed from sharing draws
SIM, SPINE, LIMIT, MISC = 0, 1, 2, 3


def replicate_rng(seed: int, index: int, stream: int = SIM) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(index)))
    return np.random.Generator(np.random.PCG64(ss))


def master_rng(seed: int, stream: int = MISC) -> np.random.Generator:
    return replicate_rng(seed, 2**32 - 1, stream)
