"""Pseudo-labeling and the confusion-matrix exchange protocol.

Clients score the broadcast classifier on their local test sets; the server
sums those confusion matrices; each client then uses the column profile of
the summed matrix (the distribution of true classes among samples predicted
as class j) to estimate the confusion of its own pseudo-labeled set.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import NO_LABEL, Dataset, with_labels
from .nn.mlp import MlpSpec, classifier_forward
from .nn.params import ParamVector


class EstimationError(ValueError):
    """Insufficient global test coverage for a predicted class."""


@dataclass
class ConfusionMatrix:
    """C x C nonnegative counts; rows are true classes, columns predictions."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.float64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValueError("confusion matrix must be square")
        if not np.isfinite(self.counts).all() or (self.counts < 0).any():
            raise ValueError("confusion entries must be finite and nonnegative")

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @staticmethod
    def zeros(num_classes: int) -> "ConfusionMatrix":
        return ConfusionMatrix(np.zeros((num_classes, num_classes)))

    @staticmethod
    def diagonal(values) -> "ConfusionMatrix":
        return ConfusionMatrix(np.diag(np.asarray(values, dtype=np.float64)))

    def total(self) -> float:
        return float(self.counts.sum())

    def save_csv(self, path) -> None:
        np.savetxt(Path(path), self.counts, delimiter=",")

    @staticmethod
    def load_csv(path) -> "ConfusionMatrix":
        return ConfusionMatrix(np.loadtxt(Path(path), delimiter=",", ndmin=2))


def predict(params: ParamVector, spec: MlpSpec, features: np.ndarray) -> np.ndarray:
    """Argmax class per row, ties resolved toward the lowest class index."""
    logits = classifier_forward(params, spec, np.asarray(features, dtype=np.float64))
    if logits.ndim == 1:
        logits = logits[None, :]
    return logits.argmax(axis=1)


def pseudo_label(global_params: ParamVector, spec: MlpSpec,
                 unlabeled: Dataset) -> Dataset:
    """Assign argmax predictions as labels; provenance becomes "pseudo"."""
    if (unlabeled.provenance != "unlabeled").any():
        raise ValueError("pseudo_label expects provenance == unlabeled")
    if len(unlabeled) == 0:
        return with_labels(unlabeled, np.zeros(0, dtype=np.int64), "pseudo")
    predictions = predict(global_params, spec, unlabeled.features)
    return with_labels(unlabeled, predictions, "pseudo")


def pseudo_label_counts(pseudo: Dataset) -> np.ndarray:
    """Per-class counts n_j of samples pseudo-labeled as class j."""
    if (pseudo.labels == NO_LABEL).any():
        raise ValueError("pseudo dataset has unlabeled rows")
    return np.bincount(pseudo.labels, minlength=pseudo.num_classes).astype(np.int64)


def confusion_from_labels(true_labels, predicted_labels, num_classes: int) -> ConfusionMatrix:
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted_labels = np.asarray(predicted_labels, dtype=np.int64)
    counts = np.zeros((num_classes, num_classes))
    np.add.at(counts, (true_labels, predicted_labels), 1.0)
    return ConfusionMatrix(counts)


def local_confusion(global_params: ParamVector, spec: MlpSpec,
                    test: Dataset) -> ConfusionMatrix:
    """Confusion of the global classifier on one client's labeled test set."""
    if (test.labels == NO_LABEL).any():
        raise ValueError("local_confusion expects a labeled test set")
    if len(test) == 0:
        return ConfusionMatrix.zeros(test.num_classes)
    predictions = predict(global_params, spec, test.features)
    return confusion_from_labels(test.labels, predictions, test.num_classes)


def aggregate_confusions(matrices: list[ConfusionMatrix]) -> ConfusionMatrix:
    if not matrices:
        raise ValueError("nothing to aggregate")
    c = matrices[0].num_classes
    if any(m.num_classes != c for m in matrices):
        raise ValueError("confusion matrices disagree on class count")
    return ConfusionMatrix(sum(m.counts for m in matrices))


def estimate_pseudo_confusion(global_test_confusion: ConfusionMatrix,
                              counts: np.ndarray) -> ConfusionMatrix:
    """Scale each normalized column of the global test confusion by n_j.

    Column j of the result is the column-j profile of the global test
    confusion times the number of samples pseudo-labeled j, so column sums
    reproduce the pseudo-label counts exactly.  A pseudo-labeled class that
    the global test set never predicted cannot be profiled and raises.
    """
    counts = np.asarray(counts, dtype=np.float64)
    c = global_test_confusion.num_classes
    if counts.shape != (c,):
        raise ValueError("counts length must equal the class count")
    column_sums = global_test_confusion.counts.sum(axis=0)
    uncovered = (counts > 0) & (column_sums <= 0)
    if uncovered.any():
        missing = np.flatnonzero(uncovered).tolist()
        raise EstimationError(
            f"global test confusion has empty columns for predicted classes "
            f"{missing}; not enough global test coverage"
        )
    estimate = np.zeros((c, c))
    active = counts > 0
    estimate[:, active] = (
        global_test_confusion.counts[:, active] / column_sums[active] * counts[active]
    )
    return ConfusionMatrix(estimate)


def empirical_pseudo_confusion(pseudo: Dataset) -> ConfusionMatrix:
    """Ground-truth confusion of a pseudo-labeled set (hidden labels; eval only)."""
    true = pseudo.hidden_labels
    if (true == NO_LABEL).any():
        raise ValueError("pseudo dataset lacks hidden true labels")
    return confusion_from_labels(true, pseudo.labels, pseudo.num_classes)
