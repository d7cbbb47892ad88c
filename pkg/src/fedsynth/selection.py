"""Precision-driven selection of pseudo-labeled data.

A kept-proportion vector rho in [0, 1]^C mixes the (diagonal) labeled
confusion with the estimated pseudo confusion.  The objective rewards
average per-class label precision of the mixture and penalizes both the L1
mass of rho and deviation of its mean from a target proportion.  The
box-constrained maximizer is found by multi-start projected gradient
ascent; a dense grid search is kept alongside as an independent oracle.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .pseudo import ConfusionMatrix
from .seeding import rng_stream
from .util import round_half_up

SOLVERS = ("projected_gradient", "grid_oracle")


@dataclass(frozen=True)
class SelectionConfig:
    w_l1: float = 0.01
    w_p: float = 0.1
    tau: float = 0.9
    solver: str = "projected_gradient"
    restarts: int = 8
    max_iters: int = 300
    step_size: float = 0.25
    tolerance: float = 1e-10
    grid_step: float = 0.05

    def __post_init__(self):
        if self.w_l1 < 0 or self.w_p < 0:
            raise ValueError("penalty weights must be nonnegative")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")


@dataclass
class SelectionResult:
    rho: np.ndarray
    objective: float
    converged: bool


def mixed_confusion(labeled: ConfusionMatrix, pseudo: ConfusionMatrix,
                    rho) -> ConfusionMatrix:
    """Labeled confusion plus the pseudo confusion with column j scaled by rho_j."""
    rho = np.asarray(rho, dtype=np.float64)
    c = labeled.num_classes
    if pseudo.num_classes != c or rho.shape != (c,):
        raise ValueError("class counts disagree")
    return ConfusionMatrix(labeled.counts + pseudo.counts * rho[None, :])


def average_precision(matrix: ConfusionMatrix) -> float:
    """Mean of diag / column-sum over columns with positive sums."""
    counts = matrix.counts
    column_sums = counts.sum(axis=0)
    present = column_sums > 0
    if not present.any():
        raise ValueError("average precision undefined: all columns are empty")
    diag = np.diag(counts)
    return float((diag[present] / column_sums[present]).mean())


def selection_objective(rho, labeled: ConfusionMatrix, pseudo: ConfusionMatrix,
                        config: SelectionConfig) -> float:
    rho = np.asarray(rho, dtype=np.float64)
    precision = average_precision(mixed_confusion(labeled, pseudo, rho))
    l1 = config.w_l1 * np.abs(rho).sum()
    drift = config.w_p * (rho.mean() - config.tau) ** 2
    return float(precision - l1 - drift)


def _fd_gradient(objective, rho, step=1e-4):
    # central differences, shifted one-sided at the box boundary
    grad = np.zeros_like(rho)
    for i in range(rho.shape[0]):
        hi = min(rho[i] + step, 1.0)
        lo = max(rho[i] - step, 0.0)
        if hi == lo:
            grad[i] = 0.0
            continue
        up = rho.copy()
        up[i] = hi
        down = rho.copy()
        down[i] = lo
        grad[i] = (objective(up) - objective(down)) / (hi - lo)
    return grad


def _ascend(objective, start, config, trace_rows=None):
    rho = np.clip(start, 0.0, 1.0)
    value = objective(rho)
    converged = False
    for iteration in range(config.max_iters):
        grad = _fd_gradient(objective, rho)
        step = config.step_size
        improved = False
        while step > 1e-8:
            candidate = np.clip(rho + step * grad, 0.0, 1.0)
            candidate_value = objective(candidate)
            if candidate_value > value:
                improved = True
                break
            step *= 0.5
        if trace_rows is not None:
            trace_rows.append((iteration, value, step,
                               float(np.linalg.norm(np.clip(rho + grad, 0, 1) - rho))))
        if not improved:
            converged = True
            break
        if candidate_value - value < config.tolerance:
            rho, value = candidate, candidate_value
            converged = True
            break
        rho, value = candidate, candidate_value
    return rho, value, converged


def _safe_objective(labeled, pseudo, config):
    # rho values where every mixed column is empty score -inf instead of raising
    def objective(rho):
        try:
            return selection_objective(rho, labeled, pseudo, config)
        except ValueError:
            return -np.inf
    return objective


def grid_search_selection(labeled: ConfusionMatrix, pseudo: ConfusionMatrix,
                          config: SelectionConfig, step: float | None = None) -> SelectionResult:
    """Exhaustive search over a regular grid; the brute-force oracle."""
    step = config.grid_step if step is None else step
    c = labeled.num_classes
    axis = np.arange(0.0, 1.0 + step / 2, step)
    objective = _safe_objective(labeled, pseudo, config)
    best_rho, best_value = None, -np.inf
    for point in itertools.product(axis, repeat=c):
        rho = np.asarray(point)
        value = objective(rho)
        if value > best_value:
            best_rho, best_value = rho, value
    return SelectionResult(rho=best_rho, objective=best_value, converged=True)


def solve_selection(labeled: ConfusionMatrix, pseudo: ConfusionMatrix,
                    config: SelectionConfig, seed: int | str = 0,
                    trace_path=None) -> SelectionResult:
    """Maximize the selection objective over the unit box.

    Projected gradient ascent restarts from all-zero, all-tau, all-one, and
    `config.restarts` random points; the best restart wins, ties going to
    the earliest.  With solver "grid_oracle" the dense grid search is used
    instead.
    """
    if config.solver == "grid_oracle":
        return grid_search_selection(labeled, pseudo, config)
    c = labeled.num_classes
    objective = _safe_objective(labeled, pseudo, config)
    rng = rng_stream(seed, "selection-restarts")
    starts = [np.zeros(c), np.full(c, config.tau), np.ones(c)]
    starts += [rng.uniform(0.0, 1.0, c) for _ in range(config.restarts)]
    trace_rows = [] if trace_path is not None else None
    best = None
    all_converged = True
    for start in starts:
        rho, value, converged = _ascend(objective, start, config, trace_rows)
        all_converged = all_converged and converged
        if best is None or value > best.objective:
            best = SelectionResult(rho=rho, objective=value, converged=converged)
    best.converged = all_converged
    if trace_path is not None:
        with open(Path(trace_path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "objective", "step_size", "projected_norm"])
            writer.writerows(trace_rows)
    return best


def apply_selection(pseudo: Dataset, rho, seed: int | str) -> Dataset:
    """Keep round(rho_c * n_c) uniformly chosen samples of each pseudo class."""
    if (pseudo.provenance != "pseudo").any():
        raise ValueError("apply_selection expects provenance == pseudo")
    rho = np.asarray(rho, dtype=np.float64)
    if rho.shape != (pseudo.num_classes,):
        raise ValueError("rho length must equal the class count")
    if (rho < 0).any() or (rho > 1).any():
        raise ValueError("rho must lie in [0, 1]")
    rng = rng_stream(seed, "apply-selection")
    kept = []
    for c in range(pseudo.num_classes):
        idx_c = np.flatnonzero(pseudo.labels == c)
        n_keep = round_half_up(rho[c] * idx_c.size)
        if n_keep > 0:
            kept.append(rng.permutation(idx_c)[:n_keep])
    idx = np.sort(np.concatenate(kept)) if kept else np.zeros(0, np.int64)
    return pseudo.subset(idx)
