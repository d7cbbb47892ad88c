"""Minimal differentiable-model kit: flat params, MLPs, VAE, losses, optimizers."""

from .gradcheck import finite_difference_grad, max_relative_error
from .losses import ClassifierLoss, cross_entropy, grad, log_softmax, softmax
from .mlp import MlpSpec, classifier_forward, init_mlp, mlp_forward, mlp_layout
from .optim import OptimizerConfig, OptimizerState, optimizer_step
from .params import (
    Layout,
    LayoutMismatchError,
    ParamVector,
    Segment,
    glorot_init,
    load_params,
    save_params,
)
from .vae import VaeLoss, VaeSpec, init_vae, vae_decode, vae_encode, vae_layout, vae_loss

__all__ = [
    "ClassifierLoss",
    "Layout",
    "LayoutMismatchError",
    "MlpSpec",
    "OptimizerConfig",
    "OptimizerState",
    "ParamVector",
    "Segment",
    "VaeLoss",
    "VaeSpec",
    "classifier_forward",
    "cross_entropy",
    "finite_difference_grad",
    "glorot_init",
    "grad",
    "init_mlp",
    "init_vae",
    "load_params",
    "log_softmax",
    "max_relative_error",
    "mlp_forward",
    "mlp_layout",
    "optimizer_step",
    "save_params",
    "softmax",
    "vae_decode",
    "vae_encode",
    "vae_layout",
    "vae_loss",
]
