"""Datasets, synthetic worlds, and client partitioning.

Every sample carries a provenance tag (labeled / unlabeled / pseudo /
synthetic).  Samples that lose their visible label keep the true class in a
hidden field so that evaluation code can score pseudo-labels later; reading
that field outside an `allow_hidden_labels()` scope raises, which keeps
training code honest.
"""

from __future__ import annotations

import json
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .seeding import rng_stream
from .util import largest_remainder, round_half_up

PROVENANCE_VALUES = ("labeled", "unlabeled", "pseudo", "synthetic")
NO_LABEL = -1

_hidden_access = threading.local()


class HiddenLabelError(RuntimeError):
    """Raised when hidden true labels are read outside an evaluation scope."""


@contextmanager
def allow_hidden_labels():
    """Unlock hidden true labels for evaluation or world-building code."""
    previous = getattr(_hidden_access, "allowed", False)
    _hidden_access.allowed = True
    try:
        yield
    finally:
        _hidden_access.allowed = previous


def hidden_labels_allowed() -> bool:
    return bool(getattr(_hidden_access, "allowed", False))


@dataclass(frozen=True)
class Sample:
    """Read-only view of one dataset row."""

    features: np.ndarray
    label: int | None
    provenance: str


class Dataset:
    """Columnar store of samples with a stable order.

    Features are float32 row vectors; labels use -1 for "absent".  The
    invariant is that a visible label is present exactly when provenance is
    not "unlabeled".
    """

    def __init__(self, features, labels, provenance, num_classes, hidden_labels=None):
        features = np.ascontiguousarray(np.asarray(features, dtype=np.float32))
        if features.ndim != 2:
            raise ValueError("features must be a 2-D array (n, d)")
        labels = np.asarray(labels, dtype=np.int64).copy()
        provenance = np.asarray(provenance, dtype="U9").copy()
        n = features.shape[0]
        if labels.shape != (n,) or provenance.shape != (n,):
            raise ValueError("features, labels and provenance lengths disagree")
        if num_classes < 1:
            raise ValueError("num_classes must be positive")
        if not np.isfinite(features).all():
            raise ValueError("features must be finite")
        bad = set(np.unique(provenance)) - set(PROVENANCE_VALUES)
        if bad:
            raise ValueError(f"unknown provenance values: {sorted(bad)}")
        if (labels >= num_classes).any():
            raise ValueError("label out of range for num_classes")
        unlabeled = provenance == "unlabeled"
        if ((labels == NO_LABEL) != unlabeled).any():
            raise ValueError("label must be present iff provenance != unlabeled")
        if hidden_labels is None:
            hidden_labels = labels.copy()
        hidden_labels = np.asarray(hidden_labels, dtype=np.int64).copy()
        if hidden_labels.shape != (n,) or (hidden_labels >= num_classes).any():
            raise ValueError("hidden labels malformed")
        for arr in (features, labels, provenance, hidden_labels):
            arr.setflags(write=False)
        self.features = features
        self.labels = labels
        self.provenance = provenance
        self.num_classes = int(num_classes)
        self._hidden_labels = hidden_labels

    @property
    def hidden_labels(self) -> np.ndarray:
        """True classes kept for evaluation only; guarded by allow_hidden_labels."""
        if not hidden_labels_allowed():
            raise HiddenLabelError(
                "hidden true labels may only be read inside allow_hidden_labels()"
            )
        return self._hidden_labels

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]

    def sample(self, i: int) -> Sample:
        label = int(self.labels[i])
        return Sample(
            features=self.features[i],
            label=None if label == NO_LABEL else label,
            provenance=str(self.provenance[i]),
        )

    def __iter__(self):
        return (self.sample(i) for i in range(len(self)))

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.features[indices],
            self.labels[indices],
            self.provenance[indices],
            self.num_classes,
            hidden_labels=self._hidden_labels[indices],
        )

    def class_histogram(self) -> np.ndarray:
        """Counts of visible labels per class (unlabeled rows are skipped)."""
        visible = self.labels[self.labels != NO_LABEL]
        return np.bincount(visible, minlength=self.num_classes).astype(np.int64)

    @staticmethod
    def concat(datasets: list["Dataset"]) -> "Dataset":
        if not datasets:
            raise ValueError("cannot concatenate zero datasets")
        num_classes = datasets[0].num_classes
        dims = {ds.dim for ds in datasets}
        if len(dims) != 1 or any(ds.num_classes != num_classes for ds in datasets):
            raise ValueError("datasets disagree on dimension or class count")
        return Dataset(
            np.concatenate([ds.features for ds in datasets]),
            np.concatenate([ds.labels for ds in datasets]),
            np.concatenate([ds.provenance for ds in datasets]),
            num_classes,
            hidden_labels=np.concatenate([ds._hidden_labels for ds in datasets]),
        )

    @staticmethod
    def empty(num_classes: int, dim: int) -> "Dataset":
        return Dataset(
            np.zeros((0, dim), dtype=np.float32),
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype="U9"),
            num_classes,
        )


def with_labels(dataset: Dataset, labels, provenance: str) -> Dataset:
    """Copy of `dataset` with new visible labels and provenance tag."""
    labels = np.asarray(labels, dtype=np.int64)
    return Dataset(
        dataset.features,
        labels,
        np.full(len(dataset), provenance, dtype="U9"),
        dataset.num_classes,
        hidden_labels=dataset._hidden_labels,
    )


def strip_labels(dataset: Dataset) -> Dataset:
    """Remove visible labels, keeping the originals in the hidden field."""
    if (dataset.labels == NO_LABEL).any():
        raise ValueError("strip_labels expects a fully labeled dataset")
    return Dataset(
        dataset.features,
        np.full(len(dataset), NO_LABEL, dtype=np.int64),
        np.full(len(dataset), "unlabeled", dtype="U9"),
        dataset.num_classes,
        hidden_labels=dataset.labels,
    )


def reveal_hidden_labels(dataset: Dataset) -> Dataset:
    """Promote hidden true labels to visible ones (oracle mode only).

    Requires an allow_hidden_labels() scope; callers are expected to log
    that they entered oracle mode.
    """
    hidden = dataset.hidden_labels
    if (hidden == NO_LABEL).any():
        raise ValueError("dataset has samples without a hidden true label")
    return with_labels(dataset, hidden, "labeled")


@dataclass(frozen=True)
class PartitionConfig:
    """How a world dataset is spread over clients.

    num_clients:     client count K
    gamma:           Dirichlet concentration for "dir" modes
    labeled_ratio:   fraction of the training pool that keeps labels
    test_fraction:   per-client labeled holdout used as the local test set
    label_mode:      "iid" or "dir" allocation of the labeled pool
    unlabeled_mode:  "iid" or "dir" allocation of the unlabeled pool
    seed:            base seed for all partition randomness
    """

    num_clients: int
    gamma: float = 0.1
    labeled_ratio: float = 0.1
    test_fraction: float = 0.25
    label_mode: str = "iid"
    unlabeled_mode: str = "iid"
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if not 0.0 <= self.labeled_ratio <= 1.0:
            raise ValueError("labeled_ratio must lie in [0, 1]")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        for mode in (self.label_mode, self.unlabeled_mode):
            if mode not in ("iid", "dir"):
                raise ValueError(f"partition mode must be iid or dir, got {mode!r}")


def make_gaussian_mixture(num_classes, per_class_n, means, sigma, seed) -> Dataset:
    """Sample an isotropic Gaussian blob of `per_class_n` points per class.

    Class c is drawn from N(means[c], sigma^2 I).  Samples are emitted in
    class-major order with provenance "labeled".
    """
    means = np.asarray(means, dtype=np.float64)
    if means.ndim != 2 or means.shape[0] != num_classes:
        raise ValueError("means must be a (num_classes, d) array")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    d = means.shape[1]
    rng = rng_stream(seed, "gaussian-mixture")
    features = np.empty((num_classes * per_class_n, d), dtype=np.float64)
    labels = np.empty(num_classes * per_class_n, dtype=np.int64)
    for c in range(num_classes):
        block = slice(c * per_class_n, (c + 1) * per_class_n)
        noise = rng.standard_normal((per_class_n, d))
        features[block] = means[c][None, :] + sigma * noise
        labels[block] = c
    provenance = np.full(num_classes * per_class_n, "labeled", dtype="U9")
    return Dataset(features, labels, provenance, num_classes)


def _partition_classes(dataset: Dataset) -> np.ndarray:
    """Class labels used to drive partitioning, falling back to hidden ones."""
    labels = dataset.labels.copy()
    if (labels == NO_LABEL).any():
        with allow_hidden_labels():
            hidden = dataset.hidden_labels
        missing = labels == NO_LABEL
        if (hidden[missing] == NO_LABEL).any():
            raise ValueError("cannot partition samples with unknown class")
        labels[missing] = hidden[missing]
    return labels


def dirichlet_partition(dataset: Dataset, config: PartitionConfig,
                        mode: str | None = None, seed: int | None = None) -> list[Dataset]:
    """Split a dataset over `config.num_clients` clients.

    In "dir" mode, each class's samples are spread according to proportions
    drawn from Dir(gamma) (one draw per class), converted to counts with
    largest-remainder rounding.  In "iid" mode every class is split as
    evenly as the counts allow.  Each client's samples keep their original
    dataset order, so a single-client partition is the identity.
    """
    mode = config.label_mode if mode is None else mode
    seed = config.seed if seed is None else seed
    if mode not in ("iid", "dir"):
        raise ValueError(f"partition mode must be iid or dir, got {mode!r}")
    k = config.num_clients
    if k > len(dataset):
        raise ValueError(f"cannot split {len(dataset)} samples over {k} clients")
    labels = _partition_classes(dataset)
    rng = rng_stream(seed, "partition", mode)
    assigned: list[list[np.ndarray]] = [[] for _ in range(k)]
    for c in range(dataset.num_classes):
        idx_c = np.flatnonzero(labels == c)
        if idx_c.size == 0:
            continue
        shuffled = rng.permutation(idx_c)
        if mode == "dir":
            proportions = rng.dirichlet(np.full(k, config.gamma))
        else:
            proportions = np.full(k, 1.0 / k)
        counts = largest_remainder(proportions, idx_c.size)
        start = 0
        for client, count in enumerate(counts):
            assigned[client].append(shuffled[start:start + count])
            start += count
    parts = []
    for client in range(k):
        idx = np.sort(np.concatenate(assigned[client])) if assigned[client] else np.zeros(0, np.int64)
        parts.append(dataset.subset(idx))
    return parts


def labeled_split(dataset: Dataset, labeled_ratio: float, seed: int) -> tuple[Dataset, Dataset]:
    """Split into a labeled part and an unlabeled part with stripped labels.

    The labeled part has round(labeled_ratio * n) samples chosen uniformly;
    the rest lose their visible label (the true one moves to the hidden
    field).  Both parts keep the original sample order.
    """
    if (dataset.labels == NO_LABEL).any():
        raise ValueError("labeled_split expects a fully labeled dataset")
    n = len(dataset)
    n_labeled = round_half_up(labeled_ratio * n)
    rng = rng_stream(seed, "labeled-split")
    perm = rng.permutation(n)
    keep = np.sort(perm[:n_labeled])
    drop = np.sort(perm[n_labeled:])
    return dataset.subset(keep), strip_labels(dataset.subset(drop))


def holdout_test_split(dataset: Dataset, test_fraction: float, seed: int,
                       min_per_class: int = 1) -> tuple[Dataset, Dataset]:
    """Stratified train/test split of a labeled dataset.

    Each present class contributes round(test_fraction * n_c) test samples,
    but at least `min_per_class` (set 0 to disable), so that every observed
    class can appear in local test confusion matrices.
    """
    if len(dataset) == 0:
        raise ValueError("cannot split an empty dataset")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    if (dataset.labels == NO_LABEL).any():
        raise ValueError("holdout_test_split expects a labeled dataset")
    rng = rng_stream(seed, "holdout")
    test_parts = []
    for c in range(dataset.num_classes):
        idx_c = np.flatnonzero(dataset.labels == c)
        if idx_c.size == 0:
            continue
        n_test = max(round_half_up(test_fraction * idx_c.size), min_per_class)
        n_test = min(n_test, idx_c.size)
        test_parts.append(rng.permutation(idx_c)[:n_test])
    test_idx = np.sort(np.concatenate(test_parts)) if test_parts else np.zeros(0, np.int64)
    mask = np.ones(len(dataset), dtype=bool)
    mask[test_idx] = False
    train_idx = np.flatnonzero(mask)
    return dataset.subset(train_idx), dataset.subset(test_idx)


def save_dataset(dataset: Dataset, directory, name: str = "dataset") -> None:
    """Write manifest.json plus features.bin (float32 little-endian, row-major)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "name": name,
        "C": dataset.num_classes,
        "d": dataset.dim,
        "n": len(dataset),
        "dtype": "f32le",
        "labels": dataset.labels.tolist(),
        "provenance": dataset.provenance.tolist(),
    }
    if (dataset._hidden_labels != dataset.labels).any():
        manifest["hidden_labels"] = dataset._hidden_labels.tolist()
    (directory / "manifest.json").write_text(json.dumps(manifest))
    (directory / "features.bin").write_bytes(
        np.ascontiguousarray(dataset.features, dtype="<f4").tobytes()
    )


def load_dataset_file(path) -> Dataset:
    """Load a dataset saved by `save_dataset`.

    `path` may be the directory or the manifest.json inside it.  Raises on a
    malformed manifest, a payload whose length disagrees with the manifest,
    or labels outside [0, C).
    """
    path = Path(path)
    directory = path.parent if path.name == "manifest.json" else path
    manifest_path = directory / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"malformed dataset manifest at {manifest_path}: {exc}") from exc
    for key in ("C", "d", "n", "dtype", "labels", "provenance"):
        if key not in manifest:
            raise ValueError(f"dataset manifest missing field {key!r}")
    if manifest["dtype"] != "f32le":
        raise ValueError(f"unsupported dtype {manifest['dtype']!r}")
    n, d = int(manifest["n"]), int(manifest["d"])
    raw = (directory / "features.bin").read_bytes()
    if len(raw) != n * d * 4:
        raise ValueError(
            f"features.bin holds {len(raw)} bytes, manifest implies {n * d * 4}"
        )
    features = np.frombuffer(raw, dtype="<f4").reshape(n, d)
    labels = np.asarray(manifest["labels"], dtype=np.int64)
    if labels.shape != (n,):
        raise ValueError("manifest labels length disagrees with n")
    if (labels >= int(manifest["C"])).any():
        raise ValueError("manifest contains a label >= C")
    hidden = manifest.get("hidden_labels")
    return Dataset(
        features,
        labels,
        np.asarray(manifest["provenance"], dtype="U9"),
        int(manifest["C"]),
        hidden_labels=None if hidden is None else np.asarray(hidden, dtype=np.int64),
    )
