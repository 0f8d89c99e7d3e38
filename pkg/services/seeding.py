from typing import Union, Sequence

import numpy as np

SeedLike = Union[int, Sequence[int], np.random.SeedSequence, np.random.Generator, None]

# Stream identifiers for per-trial random number generators
CHANNEL_STREAM = 0
PILOT_STREAM = 1
NOISE_STREAM = 2
PROBE_STREAM = 3


def get_rng(seed: SeedLike = None) -> np.random.Generator:
    """Return a Generator for an int, an int sequence, a SeedSequence or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def stream_seed(master_seed: int, stream: int, *keys: int) -> list:
    """Entropy list for an independent stream identified by (master seed, stream, keys)."""
    return [int(master_seed), int(stream), *(int(k) for k in keys)]
