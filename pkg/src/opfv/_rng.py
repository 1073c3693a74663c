"""Reproducible random streams keyed by (seed, purpose)."""
import zlib

import numpy as np


def stream(seed: int, tag: str) -> np.random.Generator:
    """Return an independent generator for ``(seed, tag)``.

    Streams for different tags never overlap and do not depend on the order
    in which they are requested, so adding a new consumer of randomness does
    not perturb existing ones.
    """
    key = zlib.crc32(tag.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(key,))
    return np.random.Generator(np.random.Philox(ss))
