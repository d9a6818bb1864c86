"""Tests for the numpy network kernel."""

import numpy as np
import pytest

from src.core import nnet
from src.models.enums import Activation
from src.utils.exceptions import CheckpointError, ShapeMismatchError, TrainingDivergedError, ValidationError


def small_mlp(seed=0):
    return nnet.Mlp.init(nnet.MlpSpec((3, 5, 4, 2), Activation.TANH), seed)


def small_gru(seed=0):
    return nnet.Gru.init(nnet.RecurrentSpec(3, 4, 2, 5), seed)


class TestSpecs:
    def test_uniform_layers(self):
        spec = nnet.MlpSpec.uniform(10, 3, 16, 4)
        assert spec.widths == (10, 16, 16, 16, 3)
        assert spec.weight_layers == 4

    def test_invalid_specs(self):
        with pytest.raises(ValidationError):
            nnet.MlpSpec((4,))
        with pytest.raises(ValidationError):
            nnet.MlpSpec.uniform(4, 1, 8, 0)
        with pytest.raises(ValidationError):
            nnet.RecurrentSpec(0)


class TestForward:
    def test_init_is_seeded(self):
        a, b = small_mlp(3), small_mlp(3)
        x = np.random.default_rng(0).normal(size=(6, 3))
        np.testing.assert_array_equal(a.forward(x), b.forward(x))
        assert not np.array_equal(a.forward(x), small_mlp(4).forward(x))

    def test_shapes(self):
        x = np.random.default_rng(0).normal(size=(6, 5, 3))
        assert small_gru().forward(x).shape == (6, 2)
        assert small_mlp().forward(x[:, 0, :]).shape == (6, 2)

    def test_wrong_input_width(self):
        with pytest.raises(ShapeMismatchError):
            small_mlp().forward(np.zeros((2, 4)))
        with pytest.raises(ShapeMismatchError):
            small_gru().forward(np.zeros((2, 3)))

    def test_wrong_target_shape(self):
        with pytest.raises(ShapeMismatchError):
            small_mlp().loss_and_grads(np.zeros((2, 3)), np.zeros((2, 3)))


class TestGradients:
    def test_mlp_gradient_check(self):
        rng = np.random.default_rng(1)
        model = small_mlp()
        assert nnet.gradient_check(model, rng.normal(size=(4, 3)), rng.normal(size=(4, 2))) < 1e-4

    def test_gru_gradient_check(self):
        rng = np.random.default_rng(2)
        model = small_gru()
        assert nnet.gradient_check(model, rng.normal(size=(3, 5, 3)), rng.normal(size=(3, 2))) < 1e-4

    def test_relu_gradient_check_away_from_kinks(self):
        rng = np.random.default_rng(3)
        model = nnet.Mlp.init(nnet.MlpSpec((3, 6, 2), Activation.RELU), 0)
        model.params["b0"] = np.full(6, 5.0)
        assert nnet.gradient_check(model, rng.uniform(-1, 1, (4, 3)), rng.normal(size=(4, 2))) < 1e-4

    @pytest.mark.parametrize("seed", range(20))
    def test_random_mlp_gradients(self, seed):
        rng = np.random.default_rng(100 + seed)
        widths = tuple(int(w) for w in rng.integers(1, 7, size=int(rng.integers(2, 5))))
        model = nnet.Mlp.init(nnet.MlpSpec(widths, Activation.TANH), seed)
        x = rng.normal(size=(int(rng.integers(1, 6)), widths[0]))
        target = rng.normal(size=(x.shape[0], widths[-1]))
        assert nnet.gradient_check(model, x, target) < 1e-4

    @pytest.mark.parametrize("seed", range(10))
    def test_random_gru_gradients(self, seed):
        rng = np.random.default_rng(200 + seed)
        inputs, hidden, outputs = (int(w) for w in rng.integers(1, 5, size=3))
        model = nnet.Gru.init(nnet.RecurrentSpec(inputs, hidden, outputs, 5), seed)
        x = rng.normal(size=(int(rng.integers(1, 4)), 5, inputs))
        target = rng.normal(size=(x.shape[0], outputs))
        assert nnet.gradient_check(model, x, target) < 1e-4

    def test_backward_flags_non_finite_loss(self):
        model = small_mlp()
        with pytest.raises(TrainingDivergedError):
            nnet.backward(model, np.zeros((2, 3)), np.full((2, 2), np.inf))


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        params = {"w": np.array([1.0, -2.0, 3.0])}
        grads = {"w": np.array([0.5, -4.0, 0.0])}
        new, state = nnet.adam_step(params, grads, nnet.AdamState(learning_rate=0.1))
        np.testing.assert_allclose(new["w"], [0.9, -1.9, 3.0], atol=1e-6)
        assert state.step == 1
        np.testing.assert_array_equal(params["w"], [1.0, -2.0, 3.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            nnet.adam_step({"w": np.zeros(3)}, {"w": np.zeros(2)}, nnet.AdamState())

    def test_minimizes_quadratic(self):
        params = {"w": np.array([3.0, -2.0])}
        state = nnet.AdamState(learning_rate=0.1)
        for _ in range(500):
            params, state = nnet.adam_step(params, {"w": 2.0 * params["w"]}, state)
        assert np.linalg.norm(params["w"]) < 0.1


class TestNormalizer:
    def test_fit_and_invert(self):
        data = np.random.default_rng(0).normal(5.0, 3.0, (200, 4))
        norm = nnet.Normalizer.fit(data)
        scaled = norm.apply(data)
        np.testing.assert_allclose(scaled.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(scaled.std(axis=0), 1.0, atol=1e-12)
        np.testing.assert_allclose(norm.invert(scaled), data)

    def test_constant_column_floor(self):
        norm = nnet.Normalizer.fit(np.ones((10, 2)))
        assert np.all(norm.std > 0)
        assert np.all(np.isfinite(norm.apply(np.ones((1, 2)))))


class TestTraining:
    def test_loss_decreases(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(64, 3))
        y = np.column_stack([x.sum(axis=1), x[:, 0] - x[:, 1]])
        model = small_mlp()
        report = nnet.train(model, x, y, epochs=60, learning_rate=1e-2, batch_size=16, seed=0)
        assert report.epochs_run == 60
        assert report.train_loss[-1] < 0.5 * report.train_loss[0]

    def test_training_is_deterministic(self):
        rng = np.random.default_rng(0)
        x, y = rng.normal(size=(20, 3)), rng.normal(size=(20, 2))
        a, b = small_mlp(), small_mlp()
        nnet.train(a, x, y, epochs=5, learning_rate=1e-2, batch_size=8, seed=7)
        nnet.train(b, x, y, epochs=5, learning_rate=1e-2, batch_size=8, seed=7)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])

    def test_early_stopping_restores_best(self):
        rng = np.random.default_rng(0)
        x, y = rng.normal(size=(16, 3)), rng.normal(size=(16, 2))
        vx, vy = rng.normal(size=(8, 3)), rng.normal(size=(8, 2))
        model = small_mlp()
        report = nnet.train(model, x, y, epochs=200, learning_rate=5e-2, validation=(vx, vy), patience=3)
        assert report.stopped_early
        assert report.epochs_run == report.best_epoch + 4
        assert nnet.mse(model.forward(vx), vy) == pytest.approx(min(report.val_loss))

    def test_empty_dataset(self):
        with pytest.raises(ValidationError):
            nnet.train(small_mlp(), np.zeros((0, 3)), np.zeros((0, 2)), epochs=1, learning_rate=1e-3)

    def test_divergence_reports_epoch(self):
        y = np.full((4, 2), np.inf)
        with pytest.raises(TrainingDivergedError) as info:
            nnet.train(small_mlp(), np.zeros((4, 3)), y, epochs=2, learning_rate=1e-3)
        assert info.value.epoch == 0


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        model = small_gru(5)
        norms = {"input": nnet.Normalizer(np.arange(3.0), np.ones(3))}
        path = nnet.save_checkpoint(tmp_path / "net.npz", model, norms, {"seed": 5}, {"model": "test"})
        loaded, loaded_norms, header = nnet.load_checkpoint(path)
        assert isinstance(loaded, nnet.Gru)
        assert header["extra"] == {"model": "test"}
        x = np.random.default_rng(0).normal(size=(2, 5, 3))
        np.testing.assert_array_equal(loaded.forward(x), model.forward(x))
        np.testing.assert_array_equal(loaded_norms["input"].mean, np.arange(3.0))

    def test_checkpoint_bytes_are_stable(self, tmp_path):
        model = small_mlp(1)
        a = nnet.save_checkpoint(tmp_path / "a.npz", model, {}, {"seed": 1})
        b = nnet.save_checkpoint(tmp_path / "b.npz", model, {}, {"seed": 1})
        assert a.read_bytes() == b.read_bytes()

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(CheckpointError):
            nnet.load_checkpoint(tmp_path / "absent.npz")
