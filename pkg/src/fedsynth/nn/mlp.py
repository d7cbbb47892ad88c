"""Plain fully-connected networks with hand-written reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import Layout, ParamVector, check_layout_compatible, glorot_init

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(d < 1 for d in dims):
            raise ValueError("all layer dims must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)


def mlp_segments(spec: MlpSpec, prefix: str = "") -> list[tuple[str, tuple[int, ...]]]:
    dims = spec.dims
    named = []
    for i in range(len(dims) - 1):
        named.append((f"{prefix}w{i}", (dims[i], dims[i + 1])))
        named.append((f"{prefix}b{i}", (dims[i + 1],)))
    return named


def mlp_layout(spec: MlpSpec, prefix: str = "") -> Layout:
    return Layout.build(mlp_segments(spec, prefix))


def init_mlp(spec: MlpSpec, rng: np.random.Generator) -> ParamVector:
    return glorot_init(mlp_layout(spec), rng)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def mlp_forward(values: np.ndarray, layout: Layout, spec: MlpSpec, x: np.ndarray,
                prefix: str = "") -> tuple[np.ndarray, list]:
    """Forward pass on a (batch, input_dim) array; returns output and cache."""
    n_layers = len(spec.dims) - 1
    cache = []
    h = x
    for i in range(n_layers):
        w = layout.view(values, f"{prefix}w{i}")
        b = layout.view(values, f"{prefix}b{i}")
        z = h @ w + b
        if i < n_layers - 1:
            a = _activate(z, spec.activation)
        else:
            a = z
        cache.append((h, z, a))
        h = a
    return h, cache


def mlp_backward(values: np.ndarray, layout: Layout, spec: MlpSpec, cache: list,
                 d_out: np.ndarray, grad: np.ndarray, prefix: str = "") -> np.ndarray:
    """Backpropagate d_out through the cached forward pass.

    Parameter gradients are accumulated into the flat `grad` array at their
    layout offsets; the gradient with respect to the input is returned.
    """
    n_layers = len(spec.dims) - 1
    delta = d_out
    for i in reversed(range(n_layers)):
        h, z, a = cache[i]
        if i < n_layers - 1:
            delta = delta * _activate_grad(z, a, spec.activation)
        layout.view(grad, f"{prefix}w{i}")[...] += h.T @ delta
        layout.view(grad, f"{prefix}b{i}")[...] += delta.sum(axis=0)
        w = layout.view(values, f"{prefix}w{i}")
        delta = delta @ w.T
    return delta


def classifier_forward(params: ParamVector, spec: MlpSpec, features: np.ndarray) -> np.ndarray:
    """Logits for one feature vector or a batch of them."""
    check_layout_compatible(params, mlp_layout(spec))
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != spec.input_dim:
        raise ValueError(f"features have dim {x.shape[1]}, spec wants {spec.input_dim}")
    out, _ = mlp_forward(params.values, params.layout, spec, x)
    return out[0] if single else out
