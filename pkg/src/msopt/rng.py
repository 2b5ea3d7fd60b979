"""Named, counter-based random streams derived from one master seed.

A stream is identified by ``(seed, name, index)``; drawing from one stream
never shifts another, so results do not depend on evaluation order or on the
number of worker threads.
"""

import zlib

import numpy as np

STREAMS = ("forward", "upper-bound", "saa", "kmeans", "dsa", "trial-choice", "soc")


def stream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    code = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, code, int(index)])
    return np.random.Generator(np.random.Philox(ss))


def inverse_cdf(probs: np.ndarray, u: float) -> int:
    """Index ``j`` with ``F(j-1) <= u < F(j)``; clipped so rounding never overflows."""
    cdf = np.cumsum(probs)
    j = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(j, len(probs) - 1)
