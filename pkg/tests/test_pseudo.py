import numpy as np
import pytest

from fedsynth.data import (
    Dataset,
    allow_hidden_labels,
    labeled_split,
    make_gaussian_mixture,
)
from fedsynth.nn import (
    ClassifierLoss,
    MlpSpec,
    OptimizerConfig,
    OptimizerState,
    init_mlp,
    optimizer_step,
)
from fedsynth.pseudo import (
    ConfusionMatrix,
    EstimationError,
    aggregate_confusions,
    confusion_from_labels,
    empirical_pseudo_confusion,
    estimate_pseudo_confusion,
    local_confusion,
    pseudo_label,
    pseudo_label_counts,
)
from fedsynth.seeding import rng_stream


def circle_means(num_classes, radius=2.0):
    angles = 2 * np.pi * np.arange(num_classes) / num_classes
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def train_classifier(spec, dataset, steps=400, lr=5e-3, seed=0):
    loss = ClassifierLoss(spec)
    params = init_mlp(spec, rng_stream(seed, "init"))
    rng = rng_stream(seed, "steps")
    state = OptimizerState.fresh()
    cfg = OptimizerConfig(kind="adam", learning_rate=lr)
    for _ in range(steps):
        idx = rng.integers(0, len(dataset), 32)
        batch = loss.make_batch(dataset, idx)
        _, g = loss.value_and_grad(params, batch)
        params, state = optimizer_step(params, g, state, cfg)
    return params


class TestPseudoLabel:
    def test_perfect_classifier_recovers_hidden_labels(self):
        # a classifier trained to convergence on a cleanly separable mixture
        spec = MlpSpec(2, (16,), 3, "tanh")
        world = make_gaussian_mixture(3, 100, circle_means(3), 0.15, seed=1)
        labeled, unlabeled = labeled_split(world, 0.5, seed=2)
        params = train_classifier(spec, labeled, steps=600, seed=3)
        pseudo = pseudo_label(params, spec, unlabeled)
        assert (pseudo.provenance == "pseudo").all()
        with allow_hidden_labels():
            assert np.array_equal(pseudo.labels, pseudo.hidden_labels)

    def test_empty_input(self):
        empty = Dataset.empty(3, 2)
        spec = MlpSpec(2, (4,), 3)
        params = init_mlp(spec, rng_stream(0))
        out = pseudo_label(params, spec, empty)
        assert len(out) == 0 and (out.provenance == "pseudo").all()

    def test_counts_sum_to_input_size(self):
        spec = MlpSpec(2, (4,), 3)
        params = init_mlp(spec, rng_stream(4))
        world = make_gaussian_mixture(3, 30, circle_means(3), 0.5, seed=5)
        _, unlabeled = labeled_split(world, 0.2, seed=6)
        pseudo = pseudo_label(params, spec, unlabeled)
        counts = pseudo_label_counts(pseudo)
        assert counts.sum() == len(unlabeled)
        assert (counts >= 0).all()

    def test_rejects_non_unlabeled_input(self):
        ds = make_gaussian_mixture(2, 4, circle_means(2), 0.1, seed=0)
        spec = MlpSpec(2, (4,), 2)
        with pytest.raises(ValueError):
            pseudo_label(init_mlp(spec, rng_stream(0)), spec, ds)


class TestLocalConfusion:
    def test_hand_counted_case(self):
        cm = confusion_from_labels([0, 0, 1, 1], [0, 1, 1, 1], 2)
        assert np.array_equal(cm.counts, np.array([[1.0, 1.0], [0.0, 2.0]]))

    def test_perfect_classifier_is_diagonal(self):
        spec = MlpSpec(2, (16,), 3, "tanh")
        world = make_gaussian_mixture(3, 60, circle_means(3), 0.15, seed=7)
        params = train_classifier(spec, world, steps=600, seed=8)
        cm = local_confusion(params, spec, world)
        assert np.array_equal(cm.counts, np.diag(np.diag(cm.counts)))
        assert cm.total() == len(world)

    def test_constant_predictor_fills_one_column(self):
        # zero parameters give zero logits everywhere; argmax picks class 0
        spec = MlpSpec(2, (4,), 3)
        from fedsynth.nn import ParamVector, mlp_layout
        params = ParamVector.zeros(mlp_layout(spec))
        world = make_gaussian_mixture(3, 10, circle_means(3), 0.2, seed=9)
        cm = local_confusion(params, spec, world)
        assert cm.counts[:, 1:].sum() == 0
        assert cm.counts[:, 0].sum() == len(world)


class TestAggregateConfusions:
    def test_single_identity(self):
        cm = ConfusionMatrix(np.array([[1.0, 2.0], [3.0, 4.0]]))
        agg = aggregate_confusions([cm])
        assert np.array_equal(agg.counts, cm.counts)

    def test_elementwise_sum(self):
        a = ConfusionMatrix(np.array([[1.0, 0.0], [2.0, 1.0]]))
        b = ConfusionMatrix(np.array([[0.0, 3.0], [1.0, 1.0]]))
        agg = aggregate_confusions([a, b])
        assert np.array_equal(agg.counts, a.counts + b.counts)
        assert agg.total() == a.total() + b.total()

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            aggregate_confusions([ConfusionMatrix.zeros(2), ConfusionMatrix.zeros(3)])


class TestEstimatePseudoConfusion:
    def test_direct_arithmetic(self):
        # global test column 0 profile (90, 10); 20 pseudo-labeled as class 0
        m = ConfusionMatrix(np.array([[90.0, 5.0], [10.0, 45.0]]))
        est = estimate_pseudo_confusion(m, np.array([20, 0]))
        assert np.allclose(est.counts[:, 0], [18.0, 2.0], atol=1e-12)
        assert np.array_equal(est.counts[:, 1], [0.0, 0.0])

    def test_diagonal_propagates_diagonal(self):
        m = ConfusionMatrix.diagonal([30.0, 50.0, 20.0])
        est = estimate_pseudo_confusion(m, np.array([4, 5, 6]))
        assert np.array_equal(est.counts, np.diag([4.0, 5.0, 6.0]))

    def test_column_sums_equal_counts(self):
        rng = rng_stream(11)
        m = ConfusionMatrix(rng.uniform(0, 50, (4, 4)))
        counts = np.array([7, 0, 13, 2])
        est = estimate_pseudo_confusion(m, counts)
        assert np.abs(est.counts.sum(axis=0) - counts).max() <= 1e-9

    def test_scaling_invariance(self):
        rng = rng_stream(12)
        m = rng.uniform(0, 30, (3, 3))
        counts = np.array([5, 9, 1])
        a = estimate_pseudo_confusion(ConfusionMatrix(m), counts)
        b = estimate_pseudo_confusion(ConfusionMatrix(3.7 * m), counts)
        assert np.allclose(a.counts, b.counts, atol=1e-12)

    def test_uncovered_class_raises(self):
        m = ConfusionMatrix(np.array([[10.0, 0.0], [5.0, 0.0]]))
        with pytest.raises(EstimationError):
            estimate_pseudo_confusion(m, np.array([0, 3]))

    def test_estimate_tracks_empirical_confusion_within_3_sigma(self):
        # stationary world: client test sets and unlabeled data share one
        # distribution, so the column profiles learned from test data should
        # statistically match the realized pseudo-label confusion
        spec = MlpSpec(2, (16,), 3, "tanh")
        world = make_gaussian_mixture(3, 400, circle_means(3, radius=1.2), 0.8, seed=20)
        train_pool, rest = labeled_split(world, 0.25, seed=21)
        params = train_classifier(spec, train_pool, steps=500, seed=22)
        for test_size in (900, 9000):
            test_pool = make_gaussian_mixture(
                3, test_size // 3, circle_means(3, radius=1.2), 0.8, seed=23)
            global_cm = local_confusion(params, spec, test_pool)
            pseudo = pseudo_label(params, spec, rest)
            counts = pseudo_label_counts(pseudo)
            est = estimate_pseudo_confusion(global_cm, counts)
            with allow_hidden_labels():
                emp = empirical_pseudo_confusion(pseudo)
            diff = est.counts - emp.counts
            # variance of each entry combines profile estimation noise
            # (binomial over the test column) and multinomial noise in the
            # realized pseudo confusion
            col_m = global_cm.counts.sum(axis=0)
            p_hat = np.divide(global_cm.counts, col_m, out=np.zeros_like(diff),
                              where=col_m > 0)
            var = np.zeros_like(diff)
            for j in range(3):
                if counts[j] == 0 or col_m[j] == 0:
                    continue
                bern = p_hat[:, j] * (1.0 - p_hat[:, j])
                var[:, j] = counts[j] ** 2 * bern / col_m[j] + counts[j] * bern
            sigma_f = np.sqrt(var.sum())
            assert np.linalg.norm(diff) <= 3.0 * sigma_f
