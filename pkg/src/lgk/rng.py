"""Counter-based random streams keyed by (master seed, replica, purpose)."""

import zlib

import numpy as np

PURPOSES = ("initial", "dynamics", "test")


def purpose_id(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(master_seed: int, replica: int = 0, purpose: str = "dynamics") -> np.random.Generator:
    """Philox generator whose stream depends only on its three keys.

    Streams for distinct (replica, purpose) are statistically independent, and
    the same keys give the same stream whatever thread draws from it.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(replica), purpose_id(purpose)))
    return np.random.Generator(np.random.Philox(ss))
