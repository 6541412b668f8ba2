"""Named splittable random streams.

Every stochastic component draws from a sub-seed derived from (root seed,
name, indices), so any part of a run can be replayed in isolation from the
tuple that produced it.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(seed: int, *parts) -> int:
    """Stable 64-bit sub-seed for a named stream.

    Parts may be strings or integers; the mapping is independent of the
    process hash seed (uses sha256, not ``hash``).
    """
    h = hashlib.sha256()
    h.update(str(int(seed)).encode())
    for part in parts:
        h.update(b"/")
        h.update(str(part).encode())
    return int.from_bytes(h.digest()[:8], "little") & _MASK64


def stream(seed: int, *parts) -> np.random.Generator:
    """Generator for the named sub-stream of ``seed``."""
    return np.random.default_rng(derive_seed(seed, *parts))
