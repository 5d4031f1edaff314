"""Named, reproducible random streams derived from one root seed.

Every source of randomness in a run (data generation, parameter init,
dropout per pass, selection masks) pulls from its own stream so that
changing one factor never perturbs the draws of another.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_to_words(key: str | int) -> tuple[int, ...]:
    if isinstance(key, int):
        return (key & 0xFFFFFFFF, (key >> 32) & 0xFFFFFFFF)
    digest = hashlib.blake2s(key.encode("utf-8"), digest_size=8).digest()
    return (
        int.from_bytes(digest[:4], "little"),
        int.from_bytes(digest[4:], "little"),
    )


def named_rng(root_seed: int, *keys: str | int) -> np.random.Generator:
    """Return a Generator for the stream identified by ``keys`` under ``root_seed``.

    The same (seed, keys) pair always yields the same stream; distinct key
    paths yield statistically independent streams.
    """
    spawn_key: tuple[int, ...] = ()
    for key in keys:
        spawn_key = spawn_key + _key_to_words(key)
    seq = np.random.SeedSequence(entropy=root_seed, spawn_key=spawn_key)
    return np.random.Generator(np.random.PCG64(seq))
