import math

import numpy as np
import pytest

from fedsynth.data import Dataset
from fedsynth.nn import (
    ClassifierLoss,
    Layout,
    LayoutMismatchError,
    MlpSpec,
    OptimizerConfig,
    OptimizerState,
    ParamVector,
    Segment,
    VaeLoss,
    VaeSpec,
    classifier_forward,
    cross_entropy,
    finite_difference_grad,
    glorot_init,
    grad,
    init_mlp,
    init_vae,
    load_params,
    max_relative_error,
    mlp_layout,
    optimizer_step,
    save_params,
    vae_decode,
    vae_encode,
    vae_layout,
    vae_loss,
)
from fedsynth.seeding import rng_stream


def labeled_dataset(x, y, num_classes):
    return Dataset(x, y, np.full(len(y), "labeled", dtype="U9"), num_classes)


def reference_forward(params, spec, x):
    """Independent straightforward re-implementation of the MLP forward pass."""
    h = np.asarray(x, dtype=np.float64)
    n_layers = len(spec.hidden_dims) + 1
    for i in range(n_layers):
        w = params.segment(f"w{i}")
        b = params.segment(f"b{i}")
        h = h @ w + b
        if i < n_layers - 1:
            h = np.maximum(h, 0) if spec.activation == "relu" else np.tanh(h)
    return h


class TestClassifierForward:
    def test_zero_params_give_zero_logits(self):
        spec = MlpSpec(3, (5,), 4, "relu")
        params = ParamVector.zeros(mlp_layout(spec))
        logits = classifier_forward(params, spec, np.ones(3))
        assert np.array_equal(logits, np.zeros(4))

    def test_deterministic(self):
        spec = MlpSpec(3, (8, 8), 4, "tanh")
        params = init_mlp(spec, rng_stream(0))
        x = rng_stream(1).standard_normal((6, 3))
        a = classifier_forward(params, spec, x)
        b = classifier_forward(params, spec, x)
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("activation", ["relu", "tanh"])
    def test_matches_independent_reimplementation(self, activation):
        spec = MlpSpec(4, (7, 5), 3, activation)
        for seed in range(5):
            params = init_mlp(spec, rng_stream(seed))
            x = rng_stream(seed, "x").standard_normal((9, 4))
            ours = classifier_forward(params, spec, x)
            ref = reference_forward(params, spec, x)
            denom = np.maximum(np.abs(ref), 1e-12)
            assert (np.abs(ours - ref) / denom).max() < 1e-6

    def test_layout_mismatch_raises(self):
        spec = MlpSpec(3, (5,), 4)
        other = MlpSpec(3, (6,), 4)
        params = init_mlp(other, rng_stream(0))
        with pytest.raises(LayoutMismatchError):
            classifier_forward(params, spec, np.ones(3))


class TestCrossEntropy:
    def test_uniform_logits(self):
        assert cross_entropy(np.zeros(10), 3) == pytest.approx(math.log(10), abs=1e-12)

    def test_large_margin_drives_loss_to_zero(self):
        logits = np.array([50.0, 0.0, 0.0])
        assert cross_entropy(logits, 0) < 1e-20

    def test_hand_instance(self):
        # -log(e^1 / (e^1 + e^2)) = log(1 + e)
        assert cross_entropy(np.array([1.0, 2.0]), 0) == pytest.approx(
            math.log(1.0 + math.e), abs=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            cross_entropy(np.array([np.inf, 0.0]), 0)


class _ConstantLoss:
    """Loss that ignores the parameters entirely."""

    def value(self, params, batch):
        return 4.2

    def value_and_grad(self, params, batch):
        return 4.2, np.zeros_like(params.values)


class _HalfSquaredNorm:
    def value(self, params, batch):
        return 0.5 * float(params.values @ params.values)

    def value_and_grad(self, params, batch):
        return self.value(params, batch), params.values.copy()


class TestGrad:
    def test_constant_loss_zero_gradient(self):
        layout = Layout.build([("w", (3, 2)), ("b", (2,))])
        params = glorot_init(layout, rng_stream(0))
        g = grad(_ConstantLoss(), params, None)
        assert np.array_equal(g.values, np.zeros(8))

    def test_half_squared_norm_gradient_is_params(self):
        layout = Layout.build([("w", (4, 1))])
        params = glorot_init(layout, rng_stream(1))
        g = grad(_HalfSquaredNorm(), params, None)
        assert np.allclose(g.values, params.values, atol=0, rtol=0)

    @pytest.mark.parametrize("seed", range(5))
    def test_classifier_gradient_matches_finite_differences(self, seed):
        spec = MlpSpec(3, (6,), 3, "tanh")
        loss = ClassifierLoss(spec)
        params = init_mlp(spec, rng_stream(seed))
        rng = rng_stream(seed, "data")
        x = rng.standard_normal((8, 3))
        y = rng.integers(0, 3, 8)
        ds = labeled_dataset(x, y, 3)
        batch = loss.make_batch(ds, np.arange(8))
        _, analytic = loss.value_and_grad(params, batch)
        numeric = finite_difference_grad(loss, params, batch, step=1e-4)
        assert max_relative_error(analytic, numeric) <= 1e-4

    def test_relu_gradient_matches_finite_differences(self):
        spec = MlpSpec(3, (6,), 3, "relu")
        loss = ClassifierLoss(spec)
        params = init_mlp(spec, rng_stream(12))
        rng = rng_stream(12, "data")
        x = rng.standard_normal((8, 3))
        y = rng.integers(0, 3, 8)
        batch = loss.make_batch(labeled_dataset(x, y, 3), np.arange(8))
        _, analytic = loss.value_and_grad(params, batch)
        numeric = finite_difference_grad(loss, params, batch, step=1e-4)
        assert max_relative_error(analytic, numeric) <= 1e-4


class TestOptimizer:
    def _scalar_params(self, value):
        layout = Layout.build([("w", (1,))])
        return ParamVector(np.array([value]), layout)

    def test_sgd_hand_case(self):
        params = self._scalar_params(1.0)
        cfg = OptimizerConfig(kind="sgd", learning_rate=0.1)
        new, _ = optimizer_step(params, np.array([2.0]), OptimizerState.fresh(), cfg)
        assert new.values[0] == pytest.approx(0.8, abs=1e-15)

    def test_zero_gradient_no_decay_is_identity(self):
        params = self._scalar_params(1.5)
        for kind in ("sgd", "adam", "adamw"):
            cfg = OptimizerConfig(kind=kind, learning_rate=0.1)
            new, _ = optimizer_step(params, np.zeros(1), OptimizerState.fresh(), cfg)
            assert new.values[0] == params.values[0]

    def test_momentum_matches_hand_recurrence(self):
        # buf_1 = g, buf_2 = mu * buf_1 + g; theta_t = theta_{t-1} - lr * buf_t
        mu, lr, g = 0.9, 0.05, 3.0
        params = self._scalar_params(0.0)
        cfg = OptimizerConfig(kind="sgd", learning_rate=lr, momentum=mu)
        state = OptimizerState.fresh()
        p1, state = optimizer_step(params, np.array([g]), state, cfg)
        p2, state = optimizer_step(p1, np.array([g]), state, cfg)
        expected = -(lr * g) - lr * (mu * g + g)
        assert p2.values[0] == pytest.approx(expected, abs=1e-15)

    def test_adam_first_step_is_signed_unit_step(self):
        params = self._scalar_params(1.0)
        cfg = OptimizerConfig(kind="adam", learning_rate=0.01)
        new, _ = optimizer_step(params, np.array([5.0]), OptimizerState.fresh(), cfg)
        # bias correction makes the first update lr * g / (|g| + eps)
        assert new.values[0] == pytest.approx(1.0 - 0.01 * 5.0 / (5.0 + 1e-8), rel=1e-9)

    def test_adamw_decouples_weight_decay(self):
        params = self._scalar_params(2.0)
        cfg = OptimizerConfig(kind="adamw", learning_rate=0.01, weight_decay=0.1)
        new, _ = optimizer_step(params, np.array([1.0]), OptimizerState.fresh(), cfg)
        expected = 2.0 - 0.01 * 1.0 / (1.0 + 1e-8) - 0.01 * 0.1 * 2.0
        assert new.values[0] == pytest.approx(expected, rel=1e-9)


class TestVae:
    def test_shapes(self):
        spec = VaeSpec(4, 2, (8,))
        params = init_vae(spec, rng_stream(0))
        mu, logvar = vae_encode(params, spec, np.ones(4))
        assert mu.shape == (2,) and logvar.shape == (2,)
        out = vae_decode(params, spec, np.zeros(2))
        assert out.shape == (4,)

    def test_deterministic(self):
        spec = VaeSpec(4, 2, (8,))
        params = init_vae(spec, rng_stream(0))
        x = rng_stream(1).standard_normal((5, 4))
        a = vae_encode(params, spec, x)
        b = vae_encode(params, spec, x)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_kl_closed_forms(self):
        # identity encoder onto (mu, logvar) = (x, 0); identity decoder
        spec = VaeSpec(1, 1, ())
        params = ParamVector.zeros(vae_layout(spec))
        params.segment("enc.w0")[...] = np.array([[1.0, 0.0]])
        params.segment("dec.w0")[...] = np.array([[1.0]])
        x = np.zeros((3, 1))
        # mu = 0, logvar = 0: loss is purely reconstruction = 0, KL = 0
        assert vae_loss(params, spec, x, kl_weight=1.0) == pytest.approx(0.0, abs=1e-15)
        ones = np.ones((3, 1))
        # mu = 1, logvar = 0 gives KL = 0.5 mu^2 = 0.5; reconstruction is exact
        assert vae_loss(params, spec, ones, kl_weight=1.0) == pytest.approx(0.5, abs=1e-12)
        # perfect reconstruction with zero KL weight
        assert vae_loss(params, spec, ones, kl_weight=0.0) == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_vae_gradient_matches_finite_differences(self, seed):
        spec = VaeSpec(3, 2, (5,))
        loss = VaeLoss(spec, kl_weight=1e-2)
        params = init_vae(spec, rng_stream(seed))
        rng = rng_stream(seed, "data")
        x = rng.standard_normal((6, 3))
        ds = Dataset(x, np.zeros(6, dtype=np.int64),
                     np.full(6, "labeled", dtype="U9"), 1)
        batch = loss.make_batch(ds, np.arange(6), rng)
        _, analytic = loss.value_and_grad(params, batch)
        numeric = finite_difference_grad(loss, params, batch, step=1e-4)
        assert max_relative_error(analytic, numeric) <= 1e-4

    def test_trained_vae_reconstructs_below_floor(self):
        # 1-D data; a latent of the same width can represent it exactly
        spec = VaeSpec(1, 1, (16,))
        loss = VaeLoss(spec, kl_weight=1e-3)
        params = init_vae(spec, rng_stream(42))
        rng = rng_stream(42, "train")
        x = rng.standard_normal((256, 1))
        ds = Dataset(x, np.zeros(256, dtype=np.int64),
                     np.full(256, "labeled", dtype="U9"), 1)
        cfg = OptimizerConfig(kind="adam", learning_rate=1e-2)
        state = OptimizerState.fresh()
        for _ in range(800):
            idx = rng.integers(0, 256, 64)
            batch = loss.make_batch(ds, idx, rng)
            _, g = loss.value_and_grad(params, batch)
            params, state = optimizer_step(params, g, state, cfg)
        mu, _ = vae_encode(params, spec, x)
        recon = vae_decode(params, spec, mu)
        mse = float(((recon - x) ** 2).mean())
        assert mse < 0.05  # well below the unit data variance


class TestLayoutAndCheckpoints:
    def test_loss_invariant_to_segment_order(self):
        spec = MlpSpec(3, (4,), 2, "tanh")
        loss = ClassifierLoss(spec)
        params = init_mlp(spec, rng_stream(5))
        rng = rng_stream(6)
        x = rng.standard_normal((4, 3))
        y = rng.integers(0, 2, 4)
        batch = loss.make_batch(labeled_dataset(x, y, 2), np.arange(4))
        # rebuild the vector with segments stored in reverse order
        reordered_segments = []
        values = []
        offset = 0
        for seg in reversed(params.layout.segments):
            reordered_segments.append(Segment(seg.name, offset, seg.length, seg.shape))
            values.append(params.segment(seg.name).ravel())
            offset += seg.length
        shuffled = ParamVector(np.concatenate(values), Layout(tuple(reordered_segments)))
        assert loss.value(shuffled, batch) == loss.value(params, batch)

    def test_checkpoint_round_trip(self, tmp_path):
        spec = MlpSpec(3, (4,), 2)
        params = init_mlp(spec, rng_stream(7))
        save_params(params, tmp_path)
        loaded = load_params(tmp_path)
        assert loaded.layout == params.layout
        # storage is float32; values survive to float32 precision
        assert np.array_equal(loaded.values, params.values.astype("<f4").astype(np.float64))

    def test_layout_must_tile_contiguously(self):
        with pytest.raises(ValueError):
            Layout((Segment("a", 0, 3, (3,)), Segment("b", 4, 2, (2,))))
