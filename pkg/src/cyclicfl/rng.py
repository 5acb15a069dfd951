"""Deterministic random streams.

All randomness in an experiment derives from one integer seed. Independent
streams are obtained by hashing (seed, tag, indices) into a PCG64 state, so
any component can be re-derived in isolation and results do not depend on
call order, platform or thread scheduling.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream(seed: int, tag: str, *indices: int) -> np.random.Generator:
    """Return the generator keyed by (seed, tag, *indices).

    The key is digested with BLAKE2b into the 128-bit PCG64 seed. Calling
    twice with the same key yields generators that produce identical draws.
    """
    h = hashlib.blake2b(digest_size=16)
    h.update(int(seed).to_bytes(8, "little", signed=True))
    h.update(tag.encode("utf-8"))
    for i in indices:
        h.update(int(i).to_bytes(8, "little", signed=True))
    state = int.from_bytes(h.digest(), "little")
    return np.random.Generator(np.random.PCG64(state))
