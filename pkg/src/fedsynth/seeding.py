"""Deterministic derivation of independent random streams.

Every randomized operation in the package draws from a generator built by
`rng_stream(*parts)`, where the parts identify the consumer (seed, phase
name, client id, round index, ...).  Distinct part tuples give statistically
independent streams, and the same tuple always gives the same stream, which
is what makes whole runs bit-reproducible.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _as_entropy(part: int | str) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & _MASK64
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    raise TypeError(f"stream key parts must be int or str, got {type(part)!r}")


def rng_stream(*parts: int | str) -> np.random.Generator:
    """Return a generator keyed by the given parts (ints and strings)."""
    if not parts:
        raise ValueError("at least one stream key part is required")
    entropy = [_as_entropy(p) for p in parts]
    return np.random.default_rng(np.random.SeedSequence(entropy))
