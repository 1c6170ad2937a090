"""Named random streams split off one root seed.

Every stochastic component draws from ``stream(root_seed, name)`` with its
own name ("init", "shuffle", ...), so adding a consumer never shifts the
randomness seen by another.
"""

import hashlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Deterministic generator for the (seed, name) pair."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))
