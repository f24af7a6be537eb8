"""Hierarchical random-number streams.

Every stochastic step in the package draws from a named stream derived from
the run seed, so changing the order or number of draws in one component never
shifts the randomness seen by another. Streams use numpy's PCG64 generator.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _token(part: int | str) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, *path: int | str) -> np.random.Generator:
    """Return a generator for the purpose identified by ``path``.

    Args:
        seed: Run-level seed.
        path: Purpose tokens, e.g. ``("source", "init")`` or
            ``("samples", identity_index)``. The same seed and path always
            produce the same stream; different paths are independent.
    """
    entropy = [_token(seed)] + [_token(part) for part in path]
    return np.random.default_rng(np.random.SeedSequence(entropy))
