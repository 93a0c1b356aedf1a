"""Counter-based random streams keyed by ``(seed, *index)``.

Every variate in a Monte Carlo run comes from a Philox generator whose key is
derived from the master seed and an integer path such as
``(STREAM_ERRORS, outer, inner)``. The same key always yields the same
numbers, independently of scheduling or thread count.
"""
import numpy as np

STREAM_DESIGN = 0
STREAM_ERRORS = 1
STREAM_FACTORS = 2
STREAM_COLUMNS = 3


def substream(seed, *key) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        if key:
            raise TypeError("cannot derive keyed substreams from a Generator")
        return seed
    if seed is None:
        seed = 0
    path = tuple(int(k) for k in key)
    if any(k < 0 for k in path):
        raise ValueError(f"stream keys must be non-negative, got {path}")
    ss = np.random.SeedSequence(int(seed), spawn_key=path)
    return np.random.Generator(np.random.Philox(ss))
