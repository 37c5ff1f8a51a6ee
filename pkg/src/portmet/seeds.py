"""Named random sub-streams derived from one root seed.

Every random choice in the pipeline (initial conditions, weight init, batch
shuffling) pulls from a stream named after its role, so runs are bitwise
reproducible and any single source of randomness can be isolated.
"""

import hashlib

import numpy as np


def derive_seed(root_seed: int, name: str) -> int:
    """Stable 63-bit seed for the sub-stream `name` under `root_seed`."""
    digest = hashlib.sha256(f"{root_seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def substream(root_seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root_seed, name))
