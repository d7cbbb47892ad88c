"""First-order optimizers over flat parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParamVector

KINDS = ("sgd", "adam", "adamw")


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "sgd"
    learning_rate: float = 0.01
    momentum: float = 0.0
    weight_decay: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if self.kind not in KINDS:
            raise ValueError(f"optimizer kind must be one of {KINDS}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class OptimizerState:
    step: int = 0
    momentum_buf: np.ndarray | None = None
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    @staticmethod
    def fresh() -> "OptimizerState":
        return OptimizerState()


def optimizer_step(params: ParamVector, grad, state: OptimizerState,
                   config: OptimizerConfig) -> tuple[ParamVector, OptimizerState]:
    """One update; returns new params and state, leaving the inputs untouched."""
    g = grad.values if isinstance(grad, ParamVector) else np.asarray(grad, dtype=np.float64)
    theta = params.values
    if g.shape != theta.shape:
        raise ValueError("gradient shape does not match parameters")
    step = state.step + 1
    if config.kind == "sgd":
        if config.weight_decay:
            g = g + config.weight_decay * theta
        if config.momentum:
            buf = g.copy() if state.momentum_buf is None else config.momentum * state.momentum_buf + g
        else:
            buf = g
        new_theta = theta - config.learning_rate * buf
        new_state = OptimizerState(step=step,
                                   momentum_buf=buf if config.momentum else None)
    else:
        b1, b2 = config.betas
        if config.kind == "adam" and config.weight_decay:
            g = g + config.weight_decay * theta
        m = np.zeros_like(theta) if state.m is None else state.m
        v = np.zeros_like(theta) if state.v is None else state.v
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** step)
        v_hat = v / (1.0 - b2 ** step)
        update = m_hat / (np.sqrt(v_hat) + config.eps)
        new_theta = theta - config.learning_rate * update
        if config.kind == "adamw" and config.weight_decay:
            new_theta = new_theta - config.learning_rate * config.weight_decay * theta
        new_state = OptimizerState(step=step, m=m, v=v)
    return ParamVector(new_theta, params.layout), new_state
