"""Federated simulation engine: local training, weighted aggregation, rounds.

Every client owns a seed key; its round-r randomness comes from
rng_stream(*seed_key, r), so clients can run in any order or in parallel
and still produce bit-identical results.  Set the DDSA_THREADS environment
variable above 1 to fan client training out over a thread pool.
"""

from __future__ import annotations

import dataclasses
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .nn.optim import OptimizerConfig, OptimizerState, optimizer_step
from .nn.params import ParamVector
from .seeding import rng_stream

PARAM_WIRE_BYTES = 4  # parameters cross the wire as float32


@dataclass
class ClientState:
    """One simulated client: its data, seed material, and local model."""

    client_id: int
    train_data: Dataset
    seed_key: tuple[int | str, ...]
    local_params: ParamVector | None = None
    optimizer_state: OptimizerState | None = None


@dataclass(frozen=True)
class RoundConfig:
    rounds: int
    local_epochs: int
    batch_size: int
    optimizer: OptimizerConfig
    participation: float = 1.0
    lr_decay: float = 1.0  # per-round multiplier; 1.0 keeps the rate constant

    def __post_init__(self):
        if self.rounds < 0 or self.local_epochs < 0:
            raise ValueError("rounds and local_epochs must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.participation <= 1.0:
            raise ValueError("participation must lie in (0, 1]")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must lie in (0, 1]")

    def optimizer_for_round(self, round_index: int) -> OptimizerConfig:
        if self.lr_decay == 1.0 or round_index <= 1:
            return self.optimizer
        scale = self.lr_decay ** (round_index - 1)
        return dataclasses.replace(
            self.optimizer, learning_rate=self.optimizer.learning_rate * scale
        )


def client_threads() -> int:
    raw = os.environ.get("DDSA_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_clients(fn, clients):
    threads = client_threads()
    if threads == 1 or len(clients) <= 1:
        return [fn(c) for c in clients]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, clients))


def local_train(client: ClientState, global_params: ParamVector,
                round_config: RoundConfig, loss_fn, round_index: int = 0) -> ParamVector:
    """Run local_epochs of mini-batch updates starting from the global model."""
    params = global_params.copy()
    n = len(client.train_data)
    if round_config.local_epochs == 0 or n == 0:
        client.local_params = params
        return params
    rng = rng_stream(*client.seed_key, round_index)
    state = OptimizerState.fresh()
    optimizer = round_config.optimizer_for_round(round_index)
    for _ in range(round_config.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, round_config.batch_size):
            idx = order[start:start + round_config.batch_size]
            batch = loss_fn.make_batch(client.train_data, idx, rng)
            _, g = loss_fn.value_and_grad(params, batch)
            params, state = optimizer_step(params, g, state, optimizer)
    client.local_params = params
    client.optimizer_state = state
    return params


def fedavg_aggregate(params_list: list[ParamVector], data_sizes) -> ParamVector:
    """Size-weighted average; the caller supplies clients in ascending id order."""
    sizes = np.asarray(data_sizes, dtype=np.float64)
    if len(params_list) == 0:
        raise ValueError("nothing to aggregate")
    if sizes.shape[0] != len(params_list):
        raise ValueError("one size per parameter vector is required")
    if (sizes <= 0).any():
        raise ValueError("data sizes must be positive")
    layout = params_list[0].layout
    length = len(params_list[0])
    for pv in params_list[1:]:
        if len(pv) != length or pv.layout.segment_names() != layout.segment_names():
            raise ValueError("parameter vectors disagree on layout")
    weights = sizes / sizes.sum()
    acc = np.zeros(length, dtype=np.float64)
    for weight, pv in zip(weights, params_list):
        acc += weight * pv.values
    return ParamVector(acc, layout)


@dataclass
class RoundRecord:
    round: int
    phase: str
    global_loss: float
    bytes_up: int
    bytes_down: int
    wall_ms: float


def run_federated(clients: list[ClientState], round_config: RoundConfig, loss_fn,
                  init_params: ParamVector, *, phase: str = "train",
                  seed: int | str = 0, probe: Dataset | None = None,
                  telemetry: list | None = None) -> ParamVector:
    """Run R rounds of broadcast / local training / weighted aggregation.

    Clients with empty training data return the broadcast model and are
    skipped by the aggregation (their weight would be zero).  Per-round
    telemetry rows are appended to `telemetry` when given; the probe set
    only feeds the reported loss and never influences training.
    """
    clients = sorted(clients, key=lambda c: c.client_id)
    global_params = init_params.copy()
    wire = len(init_params) * PARAM_WIRE_BYTES
    for r in range(1, round_config.rounds + 1):
        t0 = time.perf_counter()
        participating = _select_participants(clients, round_config.participation,
                                             seed, phase, r)
        results = _map_clients(
            lambda c: local_train(c, global_params, round_config, loss_fn, r),
            participating,
        )
        trained = [(c, p) for c, p in zip(participating, results)
                   if len(c.train_data) > 0]
        if trained:
            global_params = fedavg_aggregate(
                [p for _, p in trained],
                [len(c.train_data) for c, _ in trained],
            )
        if telemetry is not None:
            loss = _probe_loss(loss_fn, global_params, probe, seed, phase, r)
            telemetry.append(RoundRecord(
                round=r,
                phase=phase,
                global_loss=loss,
                bytes_up=len(participating) * wire,
                bytes_down=len(participating) * wire,
                wall_ms=(time.perf_counter() - t0) * 1e3,
            ))
    return global_params


def _select_participants(clients, participation, seed, phase, round_index):
    if participation >= 1.0:
        return clients
    count = max(1, int(np.floor(participation * len(clients))))
    rng = rng_stream(seed, phase, "participation", round_index)
    chosen = rng.choice(len(clients), size=count, replace=False)
    return [clients[i] for i in sorted(chosen)]


def _probe_loss(loss_fn, params, probe, seed, phase, round_index):
    if probe is None or len(probe) == 0:
        return float("nan")
    rng = rng_stream(seed, phase, "probe", round_index)
    batch = loss_fn.make_batch(probe, np.arange(len(probe)), rng)
    return float(loss_fn.value(params, batch))
