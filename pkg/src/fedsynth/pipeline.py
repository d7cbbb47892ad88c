"""End-to-end experiment orchestration, baselines, metrics, and run artifacts.

A run walks five phases:

  1. federated classifier training on each client's labeled data,
  2. pseudo-labeling of unlabeled data, the confusion-matrix exchange, and
     (optionally) precision-driven selection of the pseudo-labeled sets,
  3. federated VAE training on all features, then federated training of the
     conditional latent denoiser on encoded labeled-plus-selected data,
  4. per-client quota planning against the global class histogram and
     class-conditional synthetic generation,
  5. federated retraining of a fresh classifier on labeled plus synthetic
     data, evaluated on a shared held-out test set.

Baselines reuse the retraining phase wholesale: `fedavg_labeled` trains on
labeled data only, `fedavg_sl` on everything with hidden labels revealed
(oracle mode).  Both therefore coincide bit-for-bit with degenerate
pipeline runs, which the test suite checks.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    Dataset,
    PartitionConfig,
    allow_hidden_labels,
    dirichlet_partition,
    holdout_test_split,
    labeled_split,
    load_dataset_file,
    make_gaussian_mixture,
    reveal_hidden_labels,
    save_dataset,
    with_labels,
)
from .diffusion import (
    DenoiserLoss,
    DenoiserSpec,
    denoiser_layout,
    make_schedule,
)
from .fed import ClientState, RoundConfig, RoundRecord, run_federated
from .nn.losses import ClassifierLoss
from .nn.mlp import MlpSpec, mlp_layout
from .nn.optim import OptimizerConfig
from .nn.params import ParamVector, glorot_init, save_params
from .nn.vae import VaeLoss, VaeSpec, vae_encode, vae_layout
from .pseudo import (
    ConfusionMatrix,
    aggregate_confusions,
    confusion_from_labels,
    estimate_pseudo_confusion,
    local_confusion,
    predict,
    pseudo_label,
    pseudo_label_counts,
)
from .seeding import rng_stream
from .selection import SelectionConfig, apply_selection, solve_selection
from .synth import (
    QuotaPlan,
    SynthesisConfig,
    effective_alpha,
    generate_synthetic,
    global_histogram,
    plan_quota,
)

BASELINE_MODES = ("none", "fedavg_labeled", "fedavg_sl")
SWEEP_AXES = ("alpha", "lambda", "gamma", "selection")
PHASES = ("classifier", "vae", "cdm", "retrain")


class PhaseError(RuntimeError):
    """A pipeline phase failed; the phase name travels with the error."""

    def __init__(self, phase: str, cause: BaseException):
        super().__init__(f"phase {phase!r} failed: {cause}")
        self.phase = phase
        self.cause = cause


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class DatasetConfig:
    """Source data: a seeded Gaussian mixture or a dataset file on disk.

    With modes_per_class > 1 every class is a mixture of several Gaussian
    components; the default layout interleaves the components of different
    classes around a ring, so class regions are disconnected and a scarce
    labeled sample can miss whole modes.
    """

    kind: str = "gaussian_mixture"
    num_classes: int = 4
    per_class_n: int = 500
    sigma: float = 0.7
    radius: float = 2.0
    modes_per_class: int = 1
    means: tuple | None = None
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian_mixture", "file"):
            raise ValueError("dataset kind must be gaussian_mixture or file")
        if self.kind == "file" and not self.path:
            raise ValueError("dataset kind 'file' needs a path")
        if self.modes_per_class < 1:
            raise ValueError("modes_per_class must be >= 1")
        if self.means is not None:
            object.__setattr__(
                self, "means", tuple(tuple(float(v) for v in row) for row in self.means)
            )

    def component_means(self) -> np.ndarray:
        """One mean per mixture component (num_classes * modes_per_class rows)."""
        if self.means is not None:
            means = np.asarray(self.means, dtype=np.float64)
            expected = self.num_classes * self.modes_per_class
            if means.shape[0] != expected:
                raise ValueError(f"means must list {expected} component rows")
            return means
        total = self.num_classes * self.modes_per_class
        angles = 2.0 * np.pi * np.arange(total) / total
        return self.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)

    def component_classes(self) -> np.ndarray:
        """Class owning each component; ring positions interleave the classes."""
        total = self.num_classes * self.modes_per_class
        return np.arange(total) % self.num_classes


@dataclass(frozen=True)
class ScheduleConfig:
    # the desk default (T = 200, beta_end = 0.1) reaches the same terminal
    # noise level as the T = 1000, beta_end = 0.02 reference schedule
    timesteps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    partition: PartitionConfig = field(default_factory=lambda: PartitionConfig(num_clients=5))
    global_test_fraction: float = 0.2
    classifier_hidden: tuple[int, ...] = (32,)
    classifier_activation: str = "relu"
    vae_latent_dim: int = 2
    vae_hidden: tuple[int, ...] = (64,)
    vae_activation: str = "tanh"
    denoiser_hidden: tuple[int, ...] = (64, 64)
    label_embed_dim: int = 8
    time_embed_dim: int = 16
    kl_weight: float = 1e-3
    # reverse-step noise scale: "beta" keeps the chain variance on the data
    # scale; "alpha_bar" is the wide variant kept for A/B comparisons
    noise_mode: str = "beta"
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    phases: dict = field(default_factory=dict)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    use_selection: bool = True
    baseline_mode: str = "none"
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "classifier_hidden", tuple(self.classifier_hidden))
        object.__setattr__(self, "vae_hidden", tuple(self.vae_hidden))
        object.__setattr__(self, "denoiser_hidden", tuple(self.denoiser_hidden))
        if self.baseline_mode not in BASELINE_MODES:
            raise ValueError(f"baseline_mode must be one of {BASELINE_MODES}")
        if not 0.0 < self.global_test_fraction < 1.0:
            raise ValueError("global_test_fraction must lie in (0, 1)")
        phases = dict(self.phases)
        for name in PHASES:
            if name not in phases:
                raise ValueError(f"missing round configuration for phase {name!r}")
            if not isinstance(phases[name], RoundConfig):
                raise TypeError(f"phase {name!r} must be a RoundConfig")
        object.__setattr__(self, "phases", phases)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        def enc(value):
            if dataclasses.is_dataclass(value) and not isinstance(value, type):
                return {k: enc(v) for k, v in dataclasses.asdict(value).items()}
            if isinstance(value, dict):
                return {k: enc(v) for k, v in value.items()}
            if isinstance(value, (tuple, list)):
                return [enc(v) for v in value]
            if isinstance(value, np.generic):
                return value.item()
            return value

        return {f.name: enc(getattr(self, f.name)) for f in dataclasses.fields(self)}

    @staticmethod
    def from_dict(raw: dict) -> "ExperimentConfig":
        data = dict(raw)
        if "dataset" in data:
            data["dataset"] = DatasetConfig(**data["dataset"])
        if "partition" in data:
            data["partition"] = PartitionConfig(**data["partition"])
        if "schedule" in data:
            data["schedule"] = ScheduleConfig(**data["schedule"])
        if "selection" in data:
            sel = dict(data["selection"])
            data["selection"] = SelectionConfig(**sel)
        if "synthesis" in data:
            data["synthesis"] = SynthesisConfig(**data["synthesis"])
        phases = {}
        for name, phase_raw in data.get("phases", {}).items():
            phase_raw = dict(phase_raw)
            phase_raw["optimizer"] = OptimizerConfig(**phase_raw["optimizer"])
            phases[name] = RoundConfig(**phase_raw)
        data["phases"] = phases
        return ExperimentConfig(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @staticmethod
    def from_json_file(path) -> "ExperimentConfig":
        return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))

    # -- derived model specifications ---------------------------------------

    def classifier_spec(self, dim: int, num_classes: int) -> MlpSpec:
        return MlpSpec(dim, self.classifier_hidden, num_classes,
                       self.classifier_activation)

    def vae_spec(self, dim: int) -> VaeSpec:
        return VaeSpec(dim, self.vae_latent_dim, self.vae_hidden, self.vae_activation)

    def denoiser_spec(self, num_classes: int) -> DenoiserSpec:
        return DenoiserSpec(self.vae_latent_dim, num_classes, self.denoiser_hidden,
                            self.label_embed_dim, self.time_embed_dim)


def default_phases() -> dict:
    """Round configurations used by the reference desk-scale experiments.

    The first classifier pass trains gently (it feeds pseudo-labels); the
    denoiser takes many light rounds (federated averaging needs them to
    reach centralized quality); retraining spends a fixed communication
    budget aggressively, which is where data volume pays off.
    """
    return {
        "classifier": RoundConfig(
            rounds=60, local_epochs=2, batch_size=16,
            optimizer=OptimizerConfig(kind="sgd", learning_rate=0.03,
                                      momentum=0.9, weight_decay=1e-3),
            lr_decay=0.98,
        ),
        "vae": RoundConfig(
            rounds=30, local_epochs=2, batch_size=32,
            optimizer=OptimizerConfig(kind="adam", learning_rate=2e-3,
                                      betas=(0.5, 0.9)),
        ),
        "cdm": RoundConfig(
            rounds=300, local_epochs=2, batch_size=32,
            optimizer=OptimizerConfig(kind="adamw", learning_rate=2e-3,
                                      weight_decay=1e-4, betas=(0.9, 0.999)),
            lr_decay=0.998,
        ),
        "retrain": RoundConfig(
            rounds=50, local_epochs=10, batch_size=16,
            optimizer=OptimizerConfig(kind="sgd", learning_rate=0.1,
                                      momentum=0.9, weight_decay=1e-4),
            lr_decay=0.97,
        ),
    }


def default_config(seed: int = 0, **overrides) -> ExperimentConfig:
    """Reference desk-scale experiment: 4-class 2-D mixture, 5 skewed clients.

    Calibrated so that the labeled-only baseline is information- and
    budget-starved while the fully supervised run stays on top.
    """
    base = dict(
        dataset=DatasetConfig(per_class_n=375, sigma=1.05),
        partition=PartitionConfig(num_clients=5, gamma=0.1, labeled_ratio=0.1,
                                  test_fraction=0.25, label_mode="dir",
                                  unlabeled_mode="dir", seed=seed),
        classifier_hidden=(64, 64),
        label_embed_dim=16,
        phases=default_phases(),
        selection=SelectionConfig(w_l1=0.01, w_p=0.5, tau=0.9),
        seed=seed,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


# ---------------------------------------------------------------------------
# world construction


@dataclass
class ClientData:
    labeled_train: Dataset
    local_test: Dataset
    unlabeled: Dataset


@dataclass
class World:
    clients: list[ClientData]
    global_test: Dataset
    num_classes: int
    dim: int


def build_world(config: ExperimentConfig) -> World:
    """Materialize the source dataset and split it over clients.

    Order: global IID test holdout first, then the labeled/unlabeled pool
    split, then per-pool partitioning over clients (labeled and unlabeled
    pools may use different modes), then per-client labeled train/test
    holdouts for the confusion protocol.
    """
    ds_cfg = config.dataset
    if ds_cfg.kind == "file":
        base = load_dataset_file(ds_cfg.path)
    else:
        # draw one blob per mixture component, then collapse components onto
        # their owning classes
        component_means = ds_cfg.component_means()
        per_component = ds_cfg.per_class_n // ds_cfg.modes_per_class
        blobs = make_gaussian_mixture(
            component_means.shape[0], per_component, component_means,
            ds_cfg.sigma, config.seed,
        )
        base = with_labels(
            blobs, ds_cfg.component_classes()[blobs.labels], "labeled"
        )
    part = config.partition
    pool, global_test = holdout_test_split(
        base, config.global_test_fraction, seed=part.seed, min_per_class=1
    )
    labeled_pool, unlabeled_pool = labeled_split(pool, part.labeled_ratio, part.seed)
    if len(labeled_pool) > 0:
        labeled_parts = dirichlet_partition(labeled_pool, part, mode=part.label_mode,
                                            seed=part.seed)
    else:
        labeled_parts = [labeled_pool.subset([]) for _ in range(part.num_clients)]
    if len(unlabeled_pool) > 0:
        unlabeled_parts = dirichlet_partition(unlabeled_pool, part,
                                              mode=part.unlabeled_mode,
                                              seed=part.seed + 1)
    else:
        unlabeled_parts = [unlabeled_pool.subset([]) for _ in range(part.num_clients)]
    clients = []
    for k in range(part.num_clients):
        if len(labeled_parts[k]) > 0:
            train, test = holdout_test_split(labeled_parts[k], part.test_fraction,
                                             seed=part.seed + 2 + k)
        else:
            train, test = labeled_parts[k], labeled_parts[k]
        clients.append(ClientData(labeled_train=train, local_test=test,
                                  unlabeled=unlabeled_parts[k]))
    return World(clients=clients, global_test=global_test,
                 num_classes=base.num_classes, dim=base.dim)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    accuracy: float
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    confusion: ConfusionMatrix


def evaluate(params: ParamVector, spec: MlpSpec, test: Dataset) -> EvalResult:
    """Accuracy plus per-class precision/recall from the confusion matrix."""
    if len(test) == 0:
        raise ValueError("cannot evaluate on an empty test set")
    predictions = predict(params, spec, test.features)
    cm = confusion_from_labels(test.labels, predictions, test.num_classes)
    counts = cm.counts
    diag = np.diag(counts)
    row_sums = counts.sum(axis=1)
    col_sums = counts.sum(axis=0)
    recall = np.divide(diag, row_sums, out=np.zeros_like(diag), where=row_sums > 0)
    precision = np.divide(diag, col_sums, out=np.zeros_like(diag), where=col_sums > 0)
    return EvalResult(
        accuracy=float(diag.sum() / counts.sum()),
        per_class_precision=precision,
        per_class_recall=recall,
        confusion=cm,
    )


# ---------------------------------------------------------------------------
# run report


@dataclass
class RunReport:
    mode: str
    seed: int
    phase_metrics: dict
    final_accuracy: float
    per_class_precision: list
    per_class_recall: list
    final_confusion: list
    step1_precision: list | None = None
    alpha_requested: float | None = None
    alpha_realized: list | None = None
    selection_rho: list | None = None
    quota_totals: list | None = None
    latent_scale: float | None = None
    bytes_by_phase: dict = field(default_factory=dict)
    wall_time_s: float = 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def comparable_dict(self) -> dict:
        """Everything except wall-clock timing, for bitwise reproducibility checks."""
        d = self.to_dict()
        d.pop("wall_time_s")
        return d

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "summary.json").write_text(json.dumps(self.to_dict(), indent=2))

    @staticmethod
    def load(directory) -> "RunReport":
        raw = json.loads((Path(directory) / "summary.json").read_text())
        return RunReport(**raw)


# ---------------------------------------------------------------------------
# artifact writing


class _Artifacts:
    """Single-writer sink for one run directory; a no-op when disabled."""

    def __init__(self, out_dir):
        self.root = Path(out_dir) if out_dir is not None else None
        self.rounds: list[RoundRecord] = []
        self.metrics_rows: list[tuple] = []
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
            (self.root / "confusion").mkdir(exist_ok=True)

    @property
    def enabled(self) -> bool:
        return self.root is not None

    def write_config(self, config: ExperimentConfig) -> None:
        if self.enabled:
            (self.root / "config.resolved.json").write_text(config.to_json())

    def add_metrics(self, phase: str, result: EvalResult) -> None:
        self.metrics_rows.append((
            phase, result.accuracy,
            float(result.per_class_precision.mean()),
            float(result.per_class_recall.mean()),
        ))

    def write_confusion(self, name: str, cm: ConfusionMatrix) -> None:
        if self.enabled:
            cm.save_csv(self.root / "confusion" / f"{name}.csv")

    def write_quota(self, rows: list[dict]) -> None:
        if self.enabled:
            (self.root / "quota.json").write_text(json.dumps(rows, indent=2))

    def write_synthetic(self, client_id: int, dataset: Dataset) -> None:
        if self.enabled:
            save_dataset(dataset, self.root / "synthetic" / f"client_{client_id}",
                         name=f"synthetic_client_{client_id}")

    def write_params(self, phase: str, params: ParamVector) -> None:
        if self.enabled:
            save_params(params, self.root / "params" / phase)

    def flush(self) -> None:
        if not self.enabled:
            return
        with open(self.root / "rounds.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round", "phase", "global_loss", "bytes_up",
                             "bytes_down", "wall_ms"])
            for rec in self.rounds:
                writer.writerow([rec.round, rec.phase, repr(rec.global_loss),
                                 rec.bytes_up, rec.bytes_down, f"{rec.wall_ms:.3f}"])
        with open(self.root / "metrics.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["phase", "accuracy", "macro_precision", "macro_recall"])
            for row in self.metrics_rows:
                writer.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])


def _phase_bytes(rounds: list[RoundRecord]) -> dict:
    totals: dict[str, int] = {}
    for rec in rounds:
        totals[rec.phase] = totals.get(rec.phase, 0) + rec.bytes_up + rec.bytes_down
    return totals


# ---------------------------------------------------------------------------
# runs


def _client_states(datasets: list[Dataset], phase: str, seed: int) -> list[ClientState]:
    return [ClientState(k, ds, seed_key=(seed, phase, k))
            for k, ds in enumerate(datasets)]


def _train_phase(phase: str, datasets, loss_fn, layout, config, probe, artifacts):
    try:
        init = glorot_init(layout, rng_stream(config.seed, phase, "init"))
        params = run_federated(
            _client_states(datasets, phase, config.seed),
            config.phases[phase], loss_fn, init,
            phase=phase, seed=config.seed, probe=probe,
            telemetry=artifacts.rounds,
        )
    except Exception as exc:  # noqa: BLE001 - rewrapped with phase context
        artifacts.flush()
        raise PhaseError(phase, exc) from exc
    return params


def run_pipeline(config: ExperimentConfig, world: World | None = None,
                 out_dir=None) -> RunReport:
    """Execute all five phases and return the evaluated run report."""
    started = time.perf_counter()
    out_dir = config.out_dir if out_dir is None else out_dir
    artifacts = _Artifacts(out_dir)
    artifacts.write_config(config)
    if world is None:
        world = build_world(config)
    clf_spec = config.classifier_spec(world.dim, world.num_classes)
    clf_layout = mlp_layout(clf_spec)
    report = RunReport(mode="pipeline", seed=config.seed, phase_metrics={},
                       final_accuracy=0.0, per_class_precision=[],
                       per_class_recall=[], final_confusion=[])

    # phase 1: federated classifier on labeled data
    theta1 = _train_phase(
        "classifier", [cd.labeled_train for cd in world.clients],
        ClassifierLoss(clf_spec), clf_layout, config, world.global_test, artifacts,
    )
    step1 = evaluate(theta1, clf_spec, world.global_test)
    artifacts.add_metrics("classifier", step1)
    artifacts.write_confusion("classifier_global_test", step1.confusion)
    artifacts.write_params("classifier", theta1)
    report.phase_metrics["classifier"] = {
        "accuracy": step1.accuracy,
        "macro_precision": float(step1.per_class_precision.mean()),
        "macro_recall": float(step1.per_class_recall.mean()),
    }
    report.step1_precision = step1.per_class_precision.tolist()

    # phase 2: pseudo-labeling, confusion protocol, selection
    try:
        pseudo_sets = [pseudo_label(theta1, clf_spec, cd.unlabeled)
                       for cd in world.clients]
        locals_ = [local_confusion(theta1, clf_spec, cd.local_test)
                   for cd in world.clients]
        global_test_confusion = aggregate_confusions(locals_)
        for k, cm in enumerate(locals_):
            artifacts.write_confusion(f"local_test_client_{k}", cm)
        artifacts.write_confusion("aggregated_test", global_test_confusion)
        selected_sets = []
        rhos = []
        for k, (cd, pseudo_k) in enumerate(zip(world.clients, pseudo_sets)):
            labeled_cm = ConfusionMatrix.diagonal(cd.labeled_train.class_histogram())
            if len(pseudo_k) == 0:
                selected_sets.append(pseudo_k)
                rhos.append(np.ones(world.num_classes))
                continue
            counts = pseudo_label_counts(pseudo_k)
            pseudo_cm = estimate_pseudo_confusion(global_test_confusion, counts)
            artifacts.write_confusion(f"pseudo_estimate_client_{k}", pseudo_cm)
            if config.use_selection:
                result = solve_selection(labeled_cm, pseudo_cm, config.selection,
                                         seed=f"{config.seed}/selection/{k}")
                rho = result.rho
            else:
                rho = np.ones(world.num_classes)
            rhos.append(rho)
            selected_sets.append(
                apply_selection(pseudo_k, rho, seed=f"{config.seed}/keep/{k}")
            )
        report.selection_rho = [r.tolist() for r in rhos]
    except Exception as exc:  # noqa: BLE001
        artifacts.flush()
        raise PhaseError("pseudo_selection", exc) from exc

    # phase 3: federated VAE, then federated conditional denoiser on latents
    vae_spec = config.vae_spec(world.dim)
    vae_params = _train_phase(
        "vae",
        [Dataset.concat([cd.labeled_train, cd.unlabeled]) for cd in world.clients],
        VaeLoss(vae_spec, config.kl_weight), vae_layout(vae_spec), config,
        world.global_test, artifacts,
    )
    artifacts.write_params("vae", vae_params)

    den_spec = config.denoiser_spec(world.num_classes)
    schedule = make_schedule(config.schedule.timesteps, config.schedule.beta_start,
                             config.schedule.beta_end)
    raw_latents = []
    sq_sum, count = 0.0, 0
    for cd, selected in zip(world.clients, selected_sets):
        source = Dataset.concat([cd.labeled_train, selected])
        if len(source) == 0:
            raw_latents.append(None)
            continue
        mu, _ = vae_encode(vae_params, vae_spec, source.features)
        raw_latents.append((mu, source.labels, source.provenance))
        sq_sum += float((mu ** 2).sum())
        count += mu.size
    # clients exchange latent second moments so the chain runs on unit scale
    latent_scale = float(np.sqrt(sq_sum / count)) if count else 1.0
    report.latent_scale = latent_scale
    latent_sets = []
    for entry in raw_latents:
        if entry is None:
            latent_sets.append(Dataset.empty(world.num_classes, config.vae_latent_dim))
        else:
            mu, labels, provenance = entry
            latent_sets.append(Dataset(mu / latent_scale, labels, provenance,
                                       world.num_classes))
    probe_pool = Dataset.concat(latent_sets)
    probe = probe_pool.subset(np.arange(min(len(probe_pool), 512)))
    den_params = _train_phase(
        "cdm", latent_sets, DenoiserLoss(den_spec, schedule),
        denoiser_layout(den_spec), config, probe, artifacts,
    )
    artifacts.write_params("cdm", den_params)

    # phase 4: quota planning and synthetic generation
    try:
        hists = [cd.labeled_train.class_histogram() for cd in world.clients]
        ghist = global_histogram(hists)
        quota_rows = []
        synthetic_sets = []
        alpha_realized = []
        for k, cd in enumerate(world.clients):
            plan = plan_quota(hists[k], len(cd.unlabeled), ghist,
                              config.synthesis.alpha, config.synthesis.per_class_cap)
            syn = generate_synthetic(
                plan, den_params, den_spec, vae_params, vae_spec, schedule,
                rng_stream(config.seed, "synthesis", k),
                sampler_batch=config.synthesis.sampler_batch,
                noise_mode=config.noise_mode,
                latent_scale=latent_scale,
            )
            denom = int(hists[k].sum()) + len(cd.unlabeled)
            realized = (effective_alpha(int(hists[k].sum()), len(cd.unlabeled), len(syn))
                        if denom > 0 else None)
            alpha_realized.append(realized)
            synthetic_sets.append(syn)
            artifacts.write_synthetic(k, syn)
            quota_rows.append({
                "client_id": k,
                "alpha_requested": config.synthesis.alpha,
                "alpha_realized": realized,
                "targets": plan.targets.tolist(),
                "quotas": plan.quotas.tolist(),
            })
        artifacts.write_quota(quota_rows)
        report.alpha_requested = config.synthesis.alpha
        report.alpha_realized = alpha_realized
        report.quota_totals = [int(s.quotas.sum()) for s in
                               (QuotaPlan(r["targets"], r["quotas"]) for r in quota_rows)]
    except Exception as exc:  # noqa: BLE001
        artifacts.flush()
        raise PhaseError("synthesis", exc) from exc

    # phase 5: federated retraining on labeled plus synthetic data
    theta_final = _train_phase(
        "retrain",
        [Dataset.concat([cd.labeled_train, syn])
         for cd, syn in zip(world.clients, synthetic_sets)],
        ClassifierLoss(clf_spec), clf_layout, config, world.global_test, artifacts,
    )
    final = evaluate(theta_final, clf_spec, world.global_test)
    artifacts.add_metrics("retrain", final)
    artifacts.write_confusion("final_global_test", final.confusion)
    artifacts.write_params("retrain", theta_final)
    report.phase_metrics["retrain"] = {
        "accuracy": final.accuracy,
        "macro_precision": float(final.per_class_precision.mean()),
        "macro_recall": float(final.per_class_recall.mean()),
    }
    report.final_accuracy = final.accuracy
    report.per_class_precision = final.per_class_precision.tolist()
    report.per_class_recall = final.per_class_recall.tolist()
    report.final_confusion = final.confusion.counts.tolist()
    report.bytes_by_phase = _phase_bytes(artifacts.rounds)
    report.wall_time_s = time.perf_counter() - started
    artifacts.flush()
    if artifacts.enabled:
        report.save(artifacts.root)
    return report


def run_baseline(config: ExperimentConfig, mode: str | None = None,
                 world: World | None = None, out_dir=None) -> RunReport:
    """Train the retraining phase alone on labeled-only or fully labeled data.

    fedavg_labeled uses each client's labeled training split.  fedavg_sl
    additionally reveals the hidden true labels of the unlabeled split
    (explicit oracle mode), giving the fully supervised reference.
    """
    started = time.perf_counter()
    mode = config.baseline_mode if mode is None else mode
    if mode not in ("fedavg_labeled", "fedavg_sl"):
        raise ValueError("baseline mode must be fedavg_labeled or fedavg_sl")
    out_dir = config.out_dir if out_dir is None else out_dir
    artifacts = _Artifacts(out_dir)
    artifacts.write_config(config)
    if world is None:
        world = build_world(config)
    clf_spec = config.classifier_spec(world.dim, world.num_classes)
    if mode == "fedavg_labeled":
        datasets = [cd.labeled_train for cd in world.clients]
    else:
        with allow_hidden_labels():
            datasets = [
                Dataset.concat([cd.labeled_train, reveal_hidden_labels(cd.unlabeled)])
                if len(cd.unlabeled) > 0 else cd.labeled_train
                for cd in world.clients
            ]
    theta = _train_phase("retrain", datasets, ClassifierLoss(clf_spec),
                         mlp_layout(clf_spec), config, world.global_test, artifacts)
    final = evaluate(theta, clf_spec, world.global_test)
    artifacts.add_metrics("retrain", final)
    artifacts.write_confusion("final_global_test", final.confusion)
    artifacts.write_params("retrain", theta)
    report = RunReport(
        mode=mode,
        seed=config.seed,
        phase_metrics={"retrain": {
            "accuracy": final.accuracy,
            "macro_precision": float(final.per_class_precision.mean()),
            "macro_recall": float(final.per_class_recall.mean()),
        }},
        final_accuracy=final.accuracy,
        per_class_precision=final.per_class_precision.tolist(),
        per_class_recall=final.per_class_recall.tolist(),
        final_confusion=final.confusion.counts.tolist(),
        bytes_by_phase=_phase_bytes(artifacts.rounds),
        wall_time_s=time.perf_counter() - started,
    )
    artifacts.flush()
    if artifacts.enabled:
        report.save(artifacts.root)
    return report


def _apply_axis(config: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "alpha":
        return dataclasses.replace(
            config, synthesis=dataclasses.replace(config.synthesis, alpha=float(value))
        )
    if axis == "lambda":
        return dataclasses.replace(
            config,
            partition=dataclasses.replace(config.partition, labeled_ratio=float(value)),
        )
    if axis == "gamma":
        return dataclasses.replace(
            config, partition=dataclasses.replace(config.partition, gamma=float(value))
        )
    if axis == "selection":
        return dataclasses.replace(config, use_selection=bool(value))
    raise ValueError(f"sweep axis must be one of {SWEEP_AXES}")


def run_sweep(base_config: ExperimentConfig, axis: str, values,
              out_dir=None) -> list[RunReport]:
    """One pipeline run per value along the axis, with shared seeds.

    Writes runs under out_dir/run_<axis>_<value>/ plus a consolidated
    sweep.csv when out_dir is given.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"sweep axis must be one of {SWEEP_AXES}")
    out_root = Path(out_dir) if out_dir is not None else None
    reports = []
    for value in values:
        cfg = _apply_axis(base_config, axis, value)
        run_dir = None if out_root is None else out_root / f"run_{axis}_{value}"
        reports.append(run_pipeline(cfg, out_dir=run_dir))
    if out_root is not None:
        out_root.mkdir(parents=True, exist_ok=True)
        with open(out_root / "sweep.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([axis, "final_accuracy", "macro_precision", "macro_recall"])
            for value, rep in zip(values, reports):
                metrics = rep.phase_metrics["retrain"]
                writer.writerow([value, repr(rep.final_accuracy),
                                 repr(metrics["macro_precision"]),
                                 repr(metrics["macro_recall"])])
    return reports
