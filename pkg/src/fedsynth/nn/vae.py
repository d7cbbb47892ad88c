"""Variational autoencoder built from two MLPs sharing one parameter vector.

The encoder maps x to (mu, logvar); the reparameterized latent
z = mu + exp(logvar / 2) * eps is formed by the caller (the loss takes eps
explicitly, which keeps every loss evaluation deterministic).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import Dataset
from .mlp import MlpSpec, mlp_backward, mlp_forward, mlp_segments
from .params import Layout, ParamVector, check_layout_compatible, glorot_init


@dataclass(frozen=True)
class VaeSpec:
    input_dim: int
    latent_dim: int
    hidden_dims: tuple[int, ...]
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.latent_dim > self.input_dim:
            raise ValueError("latent_dim must not exceed input_dim")

    @property
    def downsampling_factor(self) -> float:
        return self.input_dim / self.latent_dim

    @property
    def encoder(self) -> MlpSpec:
        # final layer emits mu and logvar stacked side by side
        return MlpSpec(self.input_dim, self.hidden_dims, 2 * self.latent_dim,
                       self.activation)

    @property
    def decoder(self) -> MlpSpec:
        return MlpSpec(self.latent_dim, tuple(reversed(self.hidden_dims)),
                       self.input_dim, self.activation)


def vae_layout(spec: VaeSpec) -> Layout:
    return Layout.build(
        mlp_segments(spec.encoder, "enc.") + mlp_segments(spec.decoder, "dec.")
    )


def init_vae(spec: VaeSpec, rng: np.random.Generator) -> ParamVector:
    return glorot_init(vae_layout(spec), rng)


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def vae_encode(params: ParamVector, spec: VaeSpec, features) -> tuple[np.ndarray, np.ndarray]:
    """Posterior parameters (mu, logvar), each of width latent_dim."""
    check_layout_compatible(params, vae_layout(spec))
    x, single = _as_batch(features)
    out, _ = mlp_forward(params.values, params.layout, spec.encoder, x, "enc.")
    mu, logvar = out[:, :spec.latent_dim], out[:, spec.latent_dim:]
    if single:
        return mu[0], logvar[0]
    return mu, logvar


def vae_decode(params: ParamVector, spec: VaeSpec, z) -> np.ndarray:
    check_layout_compatible(params, vae_layout(spec))
    zb, single = _as_batch(z)
    out, _ = mlp_forward(params.values, params.layout, spec.decoder, zb, "dec.")
    return out[0] if single else out


def gaussian_kl(mu: np.ndarray, logvar: np.ndarray) -> np.ndarray:
    """KL(N(mu, diag exp(logvar)) || N(0, I)) per batch row."""
    return 0.5 * (mu * mu + np.exp(logvar) - 1.0 - logvar).sum(axis=1)


class VaeLoss:
    """Reconstruction MSE plus kl_weight * KL, averaged over the batch.

    A batch is (x, eps); eps drives the reparameterized latent.  Passing
    eps = 0 reconstructs from the posterior mean.
    """

    def __init__(self, spec: VaeSpec, kl_weight: float = 1e-3):
        self.spec = spec
        self.kl_weight = float(kl_weight)
        self.layout = vae_layout(spec)

    def init_layout(self):
        return self.layout

    def make_batch(self, dataset: Dataset, indices, rng):
        x = dataset.features[indices].astype(np.float64)
        eps = rng.standard_normal((x.shape[0], self.spec.latent_dim))
        return x, eps

    def _forward(self, params: ParamVector, batch):
        x, eps = batch
        values, layout = params.values, params.layout
        enc_out, enc_cache = mlp_forward(values, layout, self.spec.encoder, x, "enc.")
        mu, logvar = enc_out[:, :self.spec.latent_dim], enc_out[:, self.spec.latent_dim:]
        std = np.exp(0.5 * logvar)
        z = mu + std * eps
        recon, dec_cache = mlp_forward(values, layout, self.spec.decoder, z, "dec.")
        return mu, logvar, std, z, recon, enc_cache, dec_cache

    def value(self, params: ParamVector, batch) -> float:
        x, _ = batch
        check_layout_compatible(params, self.layout)
        mu, logvar, _, _, recon, _, _ = self._forward(params, batch)
        recon_err = ((recon - x) ** 2).sum(axis=1)
        loss = float((recon_err + self.kl_weight * gaussian_kl(mu, logvar)).mean())
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite loss")
        return loss

    def value_and_grad(self, params: ParamVector, batch):
        x, eps = batch
        check_layout_compatible(params, self.layout)
        mu, logvar, std, z, recon, enc_cache, dec_cache = self._forward(params, batch)
        b = x.shape[0]
        recon_err = ((recon - x) ** 2).sum(axis=1)
        loss = float((recon_err + self.kl_weight * gaussian_kl(mu, logvar)).mean())
        grad_arr = np.zeros_like(params.values)
        d_recon = 2.0 * (recon - x) / b
        d_z = mlp_backward(params.values, params.layout, self.spec.decoder,
                           dec_cache, d_recon, grad_arr, "dec.")
        w = self.kl_weight / b
        d_mu = d_z + w * mu
        d_logvar = d_z * eps * 0.5 * std + w * 0.5 * (np.exp(logvar) - 1.0)
        d_enc = np.concatenate([d_mu, d_logvar], axis=1)
        mlp_backward(params.values, params.layout, self.spec.encoder,
                     enc_cache, d_enc, grad_arr, "enc.")
        return loss, grad_arr


def vae_loss(params: ParamVector, spec: VaeSpec, features, kl_weight: float,
             eps: np.ndarray | None = None) -> float:
    """Convenience evaluation of the VAE objective on a feature batch."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("batch must be a nonempty (n, d) array")
    if eps is None:
        eps = np.zeros((x.shape[0], spec.latent_dim))
    return VaeLoss(spec, kl_weight).value(params, (x, eps))
