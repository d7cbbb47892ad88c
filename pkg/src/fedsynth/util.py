"""Small shared numeric helpers."""

from __future__ import annotations

import numpy as np


def round_half_up(x: float) -> int:
    """Round to the nearest integer, halves away from zero-free: .5 goes up."""
    return int(np.floor(x + 0.5))


def largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Apportion `total` units proportionally to nonnegative `weights`.

    Integer parts are assigned first; leftover units go to the largest
    fractional remainders, ties broken by lowest index.  The result always
    sums to `total` exactly.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if total < 0:
        raise ValueError("total must be nonnegative")
    if (weights < 0).any():
        raise ValueError("weights must be nonnegative")
    wsum = weights.sum()
    if wsum <= 0:
        raise ValueError("weights must have a positive sum")
    shares = weights / wsum * total
    base = np.floor(shares).astype(np.int64)
    leftover = total - int(base.sum())
    if leftover > 0:
        remainders = shares - base
        # stable sort keeps ascending index order among equal remainders
        order = np.argsort(-remainders, kind="stable")
        base[order[:leftover]] += 1
    return base
