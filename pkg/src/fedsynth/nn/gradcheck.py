"""Central finite-difference gradient oracle.

Deliberately independent of the reverse-mode code paths: it only ever calls
loss_fn.value() at perturbed parameter vectors.
"""

from __future__ import annotations

import numpy as np

from .params import ParamVector


def finite_difference_grad(loss_fn, params: ParamVector, batch,
                           step: float = 1e-4) -> np.ndarray:
    values = params.values
    fd = np.zeros_like(values)
    for i in range(values.shape[0]):
        bumped = values.copy()
        bumped[i] = values[i] + step
        up = loss_fn.value(ParamVector(bumped, params.layout), batch)
        bumped[i] = values[i] - step
        down = loss_fn.value(ParamVector(bumped, params.layout), batch)
        fd[i] = (up - down) / (2.0 * step)
    return fd


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray,
                       threshold: float = 1e-6) -> float:
    """Largest |a - n| / max(|a|, |n|) over coordinates with |n| above threshold."""
    mask = np.abs(numeric) > threshold
    if not mask.any():
        return 0.0
    denom = np.maximum(np.abs(analytic[mask]), np.abs(numeric[mask]))
    return float((np.abs(analytic[mask] - numeric[mask]) / denom).max())
