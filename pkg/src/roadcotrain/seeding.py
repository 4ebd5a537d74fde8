"""Named random substreams derived from one master seed."""
from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("seed components must be non-negative")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def seed_sequence(*parts) -> np.random.SeedSequence:
    return np.random.SeedSequence([_key(p) for p in parts])


def rng(*parts) -> np.random.Generator:
    """Generator for the substream identified by ``parts``, e.g. ``rng(seed, "split", 3)``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(*parts)))


def derive_seed(*parts) -> int:
    return int(seed_sequence(*parts).generate_state(1, dtype=np.uint32)[0])
