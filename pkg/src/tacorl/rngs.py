"""Named, independent random streams derived from one integer seed."""
from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, *tags) -> np.random.Generator:
    """Generator keyed by ``seed`` and a tag path, e.g. ``stream(0, "lmp", "init")``."""
    words = [int(seed) & 0xFFFFFFFF]
    for t in tags:
        words.append(zlib.crc32(str(t).encode("utf-8")))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))


def get_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def set_state(rng: np.random.Generator, state: dict) -> None:
    rng.bit_generator.state = state
