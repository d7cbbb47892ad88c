import numpy as np
import pytest

from fedsynth.data import Dataset
from fedsynth.pseudo import ConfusionMatrix
from fedsynth.seeding import rng_stream
from fedsynth.selection import (
    SelectionConfig,
    apply_selection,
    average_precision,
    grid_search_selection,
    mixed_confusion,
    selection_objective,
    solve_selection,
)


def cm(rows):
    return ConfusionMatrix(np.asarray(rows, dtype=np.float64))


def random_instance(seed, num_classes=3, scale=40.0):
    rng = rng_stream(seed, "instance")
    labeled = ConfusionMatrix.diagonal(rng.uniform(1.0, scale, num_classes))
    pseudo = ConfusionMatrix(rng.uniform(0.0, scale, (num_classes, num_classes)))
    return labeled, pseudo


class TestMixedConfusion:
    def test_zero_rho_gives_labeled(self):
        labeled, pseudo = random_instance(0)
        out = mixed_confusion(labeled, pseudo, np.zeros(3))
        assert np.array_equal(out.counts, labeled.counts)

    def test_unit_rho_gives_sum(self):
        labeled, pseudo = random_instance(1)
        out = mixed_confusion(labeled, pseudo, np.ones(3))
        assert np.allclose(out.counts, labeled.counts + pseudo.counts)

    def test_hand_case(self):
        out = mixed_confusion(cm([[10, 0], [0, 10]]), cm([[8, 2], [2, 8]]),
                              np.ones(2))
        assert np.array_equal(out.counts, np.array([[18.0, 2.0], [2.0, 18.0]]))


class TestAveragePrecision:
    def test_diagonal_is_one(self):
        assert average_precision(cm([[5, 0], [0, 9]])) == 1.0

    def test_hand_case(self):
        assert average_precision(cm([[18, 2], [2, 18]])) == pytest.approx(0.9, abs=1e-12)

    def test_zero_column_excluded(self):
        # column 1 is empty; only column 0 enters the mean
        value = average_precision(cm([[3, 0], [1, 0]]))
        assert value == pytest.approx(0.75, abs=1e-12)

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError):
            average_precision(ConfusionMatrix.zeros(2))


class TestSelectionObjective:
    def test_zero_rho_diagonal_labeled(self):
        labeled = ConfusionMatrix.diagonal([7.0, 3.0])
        cfg = SelectionConfig(w_l1=0.5, w_p=0.5, tau=0.0)
        value = selection_objective(np.zeros(2), labeled, ConfusionMatrix.zeros(2), cfg)
        assert value == pytest.approx(1.0, abs=1e-12)

    def test_target_penalty_arithmetic(self):
        labeled = ConfusionMatrix.diagonal([7.0, 3.0])
        cfg = SelectionConfig(w_l1=0.0, w_p=0.1, tau=1.0)
        value = selection_objective(np.zeros(2), labeled, ConfusionMatrix.zeros(2), cfg)
        assert value == pytest.approx(0.9, abs=1e-12)

    def test_hand_evaluation(self):
        labeled = cm([[10, 0], [0, 10]])
        pseudo = cm([[8, 2], [2, 8]])
        cfg = SelectionConfig(w_l1=0.01, w_p=0.1, tau=1.0)
        value = selection_objective(np.ones(2), labeled, pseudo, cfg)
        assert value == pytest.approx(0.88, abs=1e-9)

    def test_scale_invariance(self):
        labeled, pseudo = random_instance(5)
        cfg = SelectionConfig()
        rng = rng_stream(6)
        for _ in range(10):
            rho = rng.uniform(0, 1, 3)
            a = selection_objective(rho, labeled, pseudo, cfg)
            b = selection_objective(
                rho, ConfusionMatrix(2.5 * labeled.counts),
                ConfusionMatrix(2.5 * pseudo.counts), cfg)
            assert a == pytest.approx(b, abs=1e-12)


class TestSolveSelection:
    def test_perfect_pseudo_labels_kept_entirely(self):
        labeled = ConfusionMatrix.diagonal([5.0, 5.0, 5.0])
        pseudo = ConfusionMatrix.diagonal([9.0, 9.0, 9.0])
        cfg = SelectionConfig(w_l1=0.0, w_p=0.1, tau=1.0)
        result = solve_selection(labeled, pseudo, cfg, seed=0)
        assert np.allclose(result.rho, 1.0, atol=1e-6)

    def test_hopeless_pseudo_labels_dropped(self):
        labeled = ConfusionMatrix.diagonal([5.0, 5.0])
        pseudo = cm([[0, 7], [7, 0]])  # every pseudo label is wrong
        cfg = SelectionConfig(w_l1=0.01, w_p=0.0)
        result = solve_selection(labeled, pseudo, cfg, seed=0)
        assert np.allclose(result.rho, 0.0, atol=1e-6)

    def test_box_constraints_respected(self):
        for seed in range(5):
            labeled, pseudo = random_instance(seed)
            result = solve_selection(labeled, pseudo, SelectionConfig(), seed=seed)
            assert (result.rho >= 0.0).all() and (result.rho <= 1.0).all()

    def test_deterministic_given_seed(self):
        labeled, pseudo = random_instance(9)
        cfg = SelectionConfig()
        a = solve_selection(labeled, pseudo, cfg, seed=123)
        b = solve_selection(labeled, pseudo, cfg, seed=123)
        assert np.array_equal(a.rho, b.rho)
        assert a.objective == b.objective

    def test_beats_endpoints(self):
        cfg = SelectionConfig()
        for seed in range(5):
            labeled, pseudo = random_instance(seed, scale=25.0)
            result = solve_selection(labeled, pseudo, cfg, seed=seed)
            for endpoint in (np.zeros(3), np.ones(3)):
                assert result.objective >= selection_objective(
                    endpoint, labeled, pseudo, cfg) - 1e-12

    def test_matches_grid_oracle_within_tolerance(self):
        cfg = SelectionConfig()
        for seed in range(20):
            labeled, pseudo = random_instance(seed)
            solver = solve_selection(labeled, pseudo, cfg, seed=seed)
            oracle = grid_search_selection(labeled, pseudo, cfg, step=0.05)
            assert solver.objective >= oracle.objective - 1e-2

    def test_diagonal_improvement_does_not_hurt(self):
        # moving off-diagonal mass of one pseudo column onto its diagonal
        # cannot decrease the best achievable objective
        cfg = SelectionConfig(grid_step=0.1)
        for seed in range(5):
            labeled, pseudo = random_instance(seed)
            counts = pseudo.counts.copy()
            j = seed % 3
            moved = counts[:, j].sum() - counts[j, j]
            counts[:, j] = 0.0
            counts[j, j] = pseudo.counts[j, j] + moved
            improved = ConfusionMatrix(counts)
            base = grid_search_selection(labeled, pseudo, cfg)
            better = grid_search_selection(labeled, improved, cfg)
            assert better.objective >= base.objective - 1e-12

    def test_grid_oracle_solver_option(self):
        labeled, pseudo = random_instance(2)
        cfg = SelectionConfig(solver="grid_oracle", grid_step=0.25)
        result = solve_selection(labeled, pseudo, cfg)
        assert result.converged
        assert (result.rho >= 0.0).all() and (result.rho <= 1.0).all()

    def test_trace_file(self, tmp_path):
        labeled, pseudo = random_instance(3)
        trace = tmp_path / "trace.csv"
        solve_selection(labeled, pseudo, SelectionConfig(restarts=1), seed=0,
                        trace_path=trace)
        lines = trace.read_text().strip().splitlines()
        assert lines[0] == "iter,objective,step_size,projected_norm"
        assert len(lines) > 1


class TestApplySelection:
    def _pseudo_dataset(self, per_class=10, num_classes=3, seed=0):
        rng = rng_stream(seed, "features")
        n = per_class * num_classes
        labels = np.repeat(np.arange(num_classes), per_class)
        return Dataset(rng.standard_normal((n, 2)), labels,
                       np.full(n, "pseudo", dtype="U9"), num_classes)

    def test_unit_rho_is_identity(self):
        ds = self._pseudo_dataset()
        out = apply_selection(ds, np.ones(3), seed=0)
        assert np.array_equal(out.features, ds.features)

    def test_zero_rho_is_empty(self):
        ds = self._pseudo_dataset()
        out = apply_selection(ds, np.zeros(3), seed=0)
        assert len(out) == 0

    def test_half_keeps_half_per_class(self):
        ds = self._pseudo_dataset(per_class=10)
        out = apply_selection(ds, np.full(3, 0.5), seed=1)
        hist = out.class_histogram()
        assert (hist == 5).all()
        merged = {tuple(row) for row in ds.features.tolist()}
        assert all(tuple(row) in merged for row in out.features.tolist())

    def test_requires_pseudo_provenance(self):
        ds = self._pseudo_dataset()
        from fedsynth.data import with_labels
        relabeled = with_labels(ds, ds.labels, "labeled")
        with pytest.raises(ValueError):
            apply_selection(relabeled, np.ones(3), seed=0)
