"""Conditional denoising diffusion in latent space.

The forward process mixes a clean latent with Gaussian noise according to a
linear variance schedule; the denoiser is a small MLP that sees the noisy
latent next to a sinusoidal timestep embedding and a learned class
embedding, and is trained to predict the injected noise.  Ancestral
sampling runs the learned reverse chain from pure noise down to t = 1,
where no fresh noise is added.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .nn.mlp import MlpSpec, mlp_backward, mlp_forward, mlp_segments
from .nn.params import Layout, ParamVector, check_layout_compatible, glorot_init

NOISE_MODES = ("alpha_bar", "beta")  # reverse-step noise scale variants


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-timestep beta_t, alpha_t = 1 - beta_t and alpha_bar_t = prod alpha."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        for name in ("beta", "alpha", "alpha_bar"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not ((self.beta > 0) & (self.beta < 1)).all():
            raise ValueError("beta values must lie in (0, 1)")
        if (np.diff(self.alpha_bar) >= 0).any() or self.alpha_bar[-1] <= 0:
            raise ValueError("alpha_bar must be strictly decreasing and positive")

    @property
    def timesteps(self) -> int:
        return self.beta.shape[0]

    def beta_at(self, t):
        return self.beta[np.asarray(t) - 1]

    def alpha_at(self, t):
        return self.alpha[np.asarray(t) - 1]

    def alpha_bar_at(self, t):
        return self.alpha_bar[np.asarray(t) - 1]

    def to_json(self) -> str:
        return json.dumps({"beta": self.beta.tolist()})

    @staticmethod
    def from_json(payload: str) -> "DiffusionSchedule":
        beta = np.asarray(json.loads(payload)["beta"], dtype=np.float64)
        return DiffusionSchedule(beta, 1.0 - beta, np.cumprod(1.0 - beta))


def make_schedule(timesteps: int, beta_start: float = 1e-4,
                  beta_end: float = 2e-2) -> DiffusionSchedule:
    """Linear beta schedule over `timesteps` steps."""
    if timesteps < 1:
        raise ValueError("timesteps must be >= 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    if timesteps == 1:
        beta = np.asarray([beta_start])
    else:
        beta = np.linspace(beta_start, beta_end, timesteps)
    alpha = 1.0 - beta
    return DiffusionSchedule(beta, alpha, np.cumprod(alpha))


def forward_sample(z0: np.ndarray, t, eps: np.ndarray,
                   schedule: DiffusionSchedule) -> np.ndarray:
    """Single-step noising: sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.

    `t` is 1-indexed and may be a scalar or one value per batch row.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != z0.shape:
        raise ValueError("eps must match z0's shape")
    t = np.asarray(t)
    if (t < 1).any() or (t > schedule.timesteps).any():
        raise ValueError("t out of schedule range")
    abar = schedule.alpha_bar_at(t)
    if z0.ndim == 2 and abar.ndim == 1:
        abar = abar[:, None]
    return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * eps


@dataclass(frozen=True)
class DenoiserSpec:
    latent_dim: int
    num_classes: int
    hidden_dims: tuple[int, ...]
    label_embed_dim: int = 8
    time_embed_dim: int = 16

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        if min(self.latent_dim, self.num_classes, self.label_embed_dim,
               self.time_embed_dim) < 1:
            raise ValueError("all denoiser dims must be >= 1")

    @property
    def network(self) -> MlpSpec:
        # noisy latent, timestep embedding and class embedding side by side
        return MlpSpec(
            self.latent_dim + self.time_embed_dim + self.label_embed_dim,
            self.hidden_dims,
            self.latent_dim,
            "tanh",
        )


def denoiser_layout(spec: DenoiserSpec) -> Layout:
    named = [("label_embed", (spec.num_classes, spec.label_embed_dim))]
    named += mlp_segments(spec.network, "net.")
    return Layout.build(named)


def init_denoiser(spec: DenoiserSpec, rng: np.random.Generator) -> ParamVector:
    return glorot_init(denoiser_layout(spec), rng)


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps; shape (len(t), dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    exponents = np.arange(half) / max(half - 1, 1)
    freqs = np.exp(-np.log(10000.0) * exponents)
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((t.shape[0], 1))], axis=1)
    return emb


def _denoiser_input(values, layout, spec, z_t, t, labels):
    t_emb = timestep_embedding(t, spec.time_embed_dim)
    if t_emb.shape[0] == 1 and z_t.shape[0] > 1:
        t_emb = np.repeat(t_emb, z_t.shape[0], axis=0)
    label_table = layout.view(values, "label_embed")
    y_emb = label_table[labels]
    return np.concatenate([z_t, t_emb, y_emb], axis=1)


def denoiser_forward(params: ParamVector, spec: DenoiserSpec, z_t, t, labels) -> np.ndarray:
    """Predicted noise for a batch of noisy latents at timesteps t, class-conditioned."""
    check_layout_compatible(params, denoiser_layout(spec))
    z_t = np.asarray(z_t, dtype=np.float64)
    single = z_t.ndim == 1
    if single:
        z_t = z_t[None, :]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape[0] == 1 and z_t.shape[0] > 1:
        labels = np.repeat(labels, z_t.shape[0])
    x = _denoiser_input(params.values, params.layout, spec, z_t, t, labels)
    out, _ = mlp_forward(params.values, params.layout, spec.network, x, "net.")
    return out[0] if single else out


class DenoiserLoss:
    """Mean squared noise-prediction error on (latent, label) batches.

    make_batch draws one uniform timestep in [1, T] and one Gaussian noise
    vector per row, so the loss value is deterministic given the batch.
    """

    def __init__(self, spec: DenoiserSpec, schedule: DiffusionSchedule):
        self.spec = spec
        self.schedule = schedule
        self.layout = denoiser_layout(spec)

    def init_layout(self):
        return self.layout

    def make_batch(self, dataset: Dataset, indices, rng):
        z0 = dataset.features[indices].astype(np.float64)
        labels = dataset.labels[indices]
        if (labels < 0).any():
            raise ValueError("denoiser batches need visible labels")
        t = rng.integers(1, self.schedule.timesteps + 1, size=z0.shape[0])
        eps = rng.standard_normal(z0.shape)
        return z0, labels, t, eps

    def _forward(self, params, batch):
        z0, labels, t, eps = batch
        z_t = forward_sample(z0, t, eps, self.schedule)
        x = _denoiser_input(params.values, params.layout, self.spec, z_t, t, labels)
        out, cache = mlp_forward(params.values, params.layout, self.spec.network,
                                 x, "net.")
        return out, cache, x

    def value(self, params: ParamVector, batch) -> float:
        check_layout_compatible(params, self.layout)
        out, _, _ = self._forward(params, batch)
        eps = batch[3]
        return float(((eps - out) ** 2).sum(axis=1).mean())

    def value_and_grad(self, params: ParamVector, batch):
        check_layout_compatible(params, self.layout)
        out, cache, _ = self._forward(params, batch)
        z0, labels, t, eps = batch
        b = z0.shape[0]
        loss = float(((eps - out) ** 2).sum(axis=1).mean())
        d_out = 2.0 * (out - eps) / b
        grad_arr = np.zeros_like(params.values)
        d_input = mlp_backward(params.values, params.layout, self.spec.network,
                               cache, d_out, grad_arr, "net.")
        label_grad = params.layout.view(grad_arr, "label_embed")
        d_y = d_input[:, self.spec.latent_dim + self.spec.time_embed_dim:]
        np.add.at(label_grad, labels, d_y)
        return loss, grad_arr


def cdm_loss(denoiser_params: ParamVector, spec: DenoiserSpec, latent_batch,
             labels, schedule: DiffusionSchedule, rng: np.random.Generator) -> float:
    """Noise-prediction loss with timesteps and noise drawn from `rng`."""
    z0 = np.asarray(latent_batch, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if (labels < 0).any() or (labels >= spec.num_classes).any():
        raise ValueError("labels out of range")
    t = rng.integers(1, schedule.timesteps + 1, size=z0.shape[0])
    eps = rng.standard_normal(z0.shape)
    loss_fn = DenoiserLoss(spec, schedule)
    return loss_fn.value(denoiser_params, (z0, labels, t, eps))


def sample_latent(denoiser_params: ParamVector, spec: DenoiserSpec, label: int,
                  schedule: DiffusionSchedule, rng: np.random.Generator,
                  n: int = 1, noise_mode: str = "alpha_bar") -> np.ndarray:
    """Draw `n` class-conditional latents by running the reverse chain.

    Starting from z_T ~ N(0, I), each step removes the predicted noise and,
    for t > 1, re-injects fresh noise scaled by sqrt(1 - alpha_bar_t)
    ("alpha_bar" mode) or sqrt(beta_t) ("beta" mode); the final step is
    deterministic.  Returns an (n, latent_dim) array.
    """
    if noise_mode not in NOISE_MODES:
        raise ValueError(f"noise_mode must be one of {NOISE_MODES}")
    h = spec.latent_dim
    labels = np.full(n, int(label), dtype=np.int64)
    z = rng.standard_normal((n, h))
    for t in range(schedule.timesteps, 0, -1):
        alpha_t = schedule.alpha_at(t)
        abar_t = schedule.alpha_bar_at(t)
        predicted = denoiser_forward(denoiser_params, spec, z, t, labels)
        z = (z - (1.0 - alpha_t) / np.sqrt(1.0 - abar_t) * predicted) / np.sqrt(alpha_t)
        if t > 1:
            scale = np.sqrt(1.0 - abar_t) if noise_mode == "alpha_bar" else np.sqrt(
                schedule.beta_at(t))
            z = z + scale * rng.standard_normal((n, h))
    return z
