"""Synthetic-data planning and generation.

Clients upload per-class labeled counts; the server sums them into a global
class histogram.  Each client then sizes a per-class synthetic quota so
that its labeled-plus-synthetic set follows the global class proportions at
a total size controlled by the augmentation strength, and fills the quota
by sampling class-conditional latents and decoding them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .diffusion import DenoiserSpec, DiffusionSchedule, sample_latent
from .nn.params import ParamVector
from .nn.vae import VaeSpec, vae_decode
from .util import largest_remainder, round_half_up


@dataclass(frozen=True)
class SynthesisConfig:
    """alpha is the augmentation strength: the desired ratio of
    (labeled + synthetic) to (labeled + unlabeled) sample counts."""

    alpha: float = 1.0
    per_class_cap: int | None = None
    sampler_batch: int = 512

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.per_class_cap is not None and self.per_class_cap < 0:
            raise ValueError("per_class_cap must be nonnegative")


@dataclass
class QuotaPlan:
    """Integer per-class synthesis plan for one client."""

    targets: np.ndarray  # desired labeled-plus-synthetic counts per class
    quotas: np.ndarray   # synthetic samples to generate per class

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.int64)
        self.quotas = np.asarray(self.quotas, dtype=np.int64)
        if (self.targets < 0).any() or (self.quotas < 0).any():
            raise ValueError("quota plan counts must be nonnegative")

    @property
    def total(self) -> int:
        return int(self.quotas.sum())


def global_histogram(local_histograms) -> np.ndarray:
    """Elementwise sum of per-client class histograms."""
    stacked = [np.asarray(h, dtype=np.int64) for h in local_histograms]
    if not stacked:
        raise ValueError("nothing to aggregate")
    length = stacked[0].shape
    if any(h.shape != length for h in stacked):
        raise ValueError("class histograms disagree on length")
    return np.sum(stacked, axis=0)


def plan_quota(local_labeled, n_unlabeled: int, global_hist,
               alpha: float, per_class_cap: int | None = None) -> QuotaPlan:
    """Per-class synthetic counts aligning a client with the global histogram.

    The combined target size is round(alpha * (n_labeled + n_unlabeled)),
    apportioned over classes by the global proportions with
    largest-remainder rounding; each class then needs
    max(0, target_c - labeled_c) synthetic samples.
    """
    local_labeled = np.asarray(local_labeled, dtype=np.int64)
    global_hist = np.asarray(global_hist, dtype=np.float64)
    if local_labeled.shape != global_hist.shape:
        raise ValueError("histogram lengths disagree")
    if global_hist.sum() <= 0:
        raise ValueError("global histogram is empty")
    total = round_half_up(alpha * (int(local_labeled.sum()) + int(n_unlabeled)))
    targets = largest_remainder(global_hist, total)
    quotas = np.maximum(0, targets - local_labeled)
    if per_class_cap is not None:
        quotas = np.minimum(quotas, per_class_cap)
    return QuotaPlan(targets=targets, quotas=quotas)


def effective_alpha(local_labeled_total: int, n_unlabeled: int,
                    synthetic_total: int) -> float:
    """Realized augmentation strength after clipping: (l + syn) / (l + u)."""
    denom = local_labeled_total + n_unlabeled
    if denom <= 0:
        raise ValueError("client has no data")
    return (local_labeled_total + synthetic_total) / denom


def generate_synthetic(quota: QuotaPlan, denoiser_params: ParamVector,
                       denoiser_spec: DenoiserSpec, decoder_params: ParamVector,
                       vae_spec: VaeSpec, schedule: DiffusionSchedule,
                       rng: np.random.Generator, sampler_batch: int = 512,
                       noise_mode: str = "alpha_bar",
                       latent_scale: float = 1.0) -> Dataset:
    """Materialize the quota: sample latents per class, decode to features.

    Classes are generated in ascending order from independent child streams
    of `rng`, so the merge order is deterministic regardless of any
    per-class fan-out.  `latent_scale` undoes any whitening applied to the
    latents the denoiser was trained on.
    """
    num_classes = denoiser_spec.num_classes
    if quota.quotas.shape != (num_classes,):
        raise ValueError("quota length disagrees with the class count")
    class_streams = rng.spawn(num_classes)
    feature_blocks = []
    label_blocks = []
    for c in range(num_classes):
        remaining = int(quota.quotas[c])
        while remaining > 0:
            n = min(remaining, sampler_batch)
            latents = sample_latent(denoiser_params, denoiser_spec, c, schedule,
                                    class_streams[c], n=n, noise_mode=noise_mode)
            feature_blocks.append(
                vae_decode(decoder_params, vae_spec, latents * latent_scale))
            label_blocks.append(np.full(n, c, dtype=np.int64))
            remaining -= n
    if not feature_blocks:
        return Dataset.empty(num_classes, vae_spec.input_dim)
    features = np.concatenate(feature_blocks)
    labels = np.concatenate(label_blocks)
    return Dataset(
        features,
        labels,
        np.full(labels.shape[0], "synthetic", dtype="U9"),
        num_classes,
    )
