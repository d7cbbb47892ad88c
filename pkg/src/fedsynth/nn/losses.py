"""Batch losses with exact gradients.

Loss objects share a small protocol:

  make_batch(dataset, indices, rng) -> batch   (row selection + any noise)
  value(params, batch) -> float
  value_and_grad(params, batch) -> (float, flat gradient array)

All randomness is drawn in make_batch, so value() is a deterministic
function of (params, batch) and central finite differences apply directly.
"""

from __future__ import annotations

import numpy as np

from ..data import Dataset
from .mlp import MlpSpec, mlp_backward, mlp_forward, mlp_layout
from .params import ParamVector, check_layout_compatible



def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def cross_entropy(logits: np.ndarray, label) -> float:
    """Softmax cross-entropy; mean over the batch when inputs are 2-D."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(logits).all():
        raise ValueError("logits must be finite")
    single = logits.ndim == 1
    if single:
        logits = logits[None, :]
        labels = np.asarray([label], dtype=np.int64)
    else:
        labels = np.asarray(label, dtype=np.int64)
    if (labels < 0).any() or (labels >= logits.shape[1]).any():
        raise ValueError("label out of range")
    logp = log_softmax(logits)
    return float(-logp[np.arange(len(labels)), labels].mean())


class ClassifierLoss:
    """Mean cross-entropy of an MLP classifier over a labeled batch."""

    def __init__(self, spec: MlpSpec):
        self.spec = spec
        self.layout = mlp_layout(spec)

    def init_layout(self):
        return self.layout

    def make_batch(self, dataset: Dataset, indices, rng=None):
        x = dataset.features[indices].astype(np.float64)
        y = dataset.labels[indices]
        if (y < 0).any():
            raise ValueError("classifier batches need visible labels")
        return x, y

    def value(self, params: ParamVector, batch) -> float:
        x, y = batch
        check_layout_compatible(params, self.layout)
        logits, _ = mlp_forward(params.values, params.layout, self.spec, x)
        return cross_entropy(logits, y)

    def value_and_grad(self, params: ParamVector, batch):
        x, y = batch
        check_layout_compatible(params, self.layout)
        logits, cache = mlp_forward(params.values, params.layout, self.spec, x)
        loss = cross_entropy(logits, y)
        b = x.shape[0]
        d_logits = softmax(logits)
        d_logits[np.arange(b), y] -= 1.0
        d_logits /= b
        grad = np.zeros_like(params.values)
        mlp_backward(params.values, params.layout, self.spec, cache, d_logits, grad)
        return loss, grad


def grad(loss_fn, params: ParamVector, batch) -> ParamVector:
    """Exact reverse-mode gradient of the mean batch loss."""
    _, g = loss_fn.value_and_grad(params, batch)
    if not np.isfinite(g).all():
        raise FloatingPointError("non-finite gradient")
    return ParamVector(g, params.layout)
