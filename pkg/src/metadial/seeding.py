"""Named random streams derived from one root seed.

``datagen`` seeds dialog generation, ``init`` parameter initialization,
``batching`` example order and ``dropout`` dropout masks.  Extra integers
(an epoch, a task tag) select independent sub-streams.
"""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("datagen", "init", "batching", "dropout")


def stream_seed(root: int, name: str, *extra: int) -> int:
    """32-bit seed for the named random stream of root seed ``root``."""
    if name not in STREAMS:
        raise ValueError(f"unknown random stream {name!r}")
    parts = [int(root), zlib.crc32(name.encode()), *(int(x) for x in extra)]
    return int(np.random.SeedSequence(parts).generate_state(1)[0])


def stream_rng(root: int, name: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng(stream_seed(root, name, *extra))
