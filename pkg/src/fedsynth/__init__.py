"""Desk-scale simulator for federated semi-supervised learning with
diffusion-based synthetic data augmentation.

Everything is deterministic given a master seed: data synthesis, client
partitioning, federated training, diffusion sampling, and the experiment
pipeline all derive their randomness from named streams.
"""

from . import data, diffusion, fed, nn, pipeline, pseudo, selection, synth
from .data import (
    Dataset,
    HiddenLabelError,
    PartitionConfig,
    Sample,
    allow_hidden_labels,
    dirichlet_partition,
    holdout_test_split,
    labeled_split,
    load_dataset_file,
    make_gaussian_mixture,
    save_dataset,
)
from .diffusion import (
    DenoiserLoss,
    DenoiserSpec,
    DiffusionSchedule,
    cdm_loss,
    forward_sample,
    make_schedule,
    sample_latent,
)
from .fed import ClientState, RoundConfig, fedavg_aggregate, local_train, run_federated
from .pipeline import (
    ExperimentConfig,
    RunReport,
    World,
    build_world,
    default_config,
    evaluate,
    run_baseline,
    run_pipeline,
    run_sweep,
)
from .pseudo import (
    ConfusionMatrix,
    EstimationError,
    aggregate_confusions,
    estimate_pseudo_confusion,
    local_confusion,
    pseudo_label,
    pseudo_label_counts,
)
from .selection import (
    SelectionConfig,
    SelectionResult,
    apply_selection,
    average_precision,
    grid_search_selection,
    mixed_confusion,
    selection_objective,
    solve_selection,
)
from .synth import (
    QuotaPlan,
    SynthesisConfig,
    effective_alpha,
    generate_synthetic,
    global_histogram,
    plan_quota,
)

__version__ = "0.1.0"
