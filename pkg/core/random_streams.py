"""Named random substreams.

Every random decision in training draws from a generator derived from
``(seed, *keys)`` with a stable hash, so the draw does not depend on the order
in which other decisions were made or on thread scheduling.
"""

import hashlib
from typing import Any

import numpy as np

SEED_BITS = 63


def derive_seed(seed: int, *keys: Any) -> int:
    """Stable non-negative integer seed for ``(seed, *keys)``."""
    material = "\x1f".join([str(int(seed))] + [str(key) for key in keys])
    digest = hashlib.blake2b(material.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> (64 - SEED_BITS)


def stream(seed: int, *keys: Any) -> np.random.Generator:
    """Generator for one named purpose, e.g. ``stream(seed, iteration, "propose", layer)``."""
    return np.random.default_rng(derive_seed(seed, *keys))


def draw_seed(rng: np.random.Generator) -> int:
    """Draw a per-call sampling seed from ``rng``."""
    return int(rng.integers(0, 2 ** 31 - 1))
