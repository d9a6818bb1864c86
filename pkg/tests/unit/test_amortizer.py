"""Tests for the learned linking cost."""

import numpy as np
import pytest

from src.core import amortizer
from src.core.dynamics_model import save_dynamics
from src.utils.config import AmortizerHyper
from src.utils.exceptions import CheckpointError, ValidationError
from tests.fixtures import HISTORY, KEYPOINTS, SyntheticModels, history, synthetic_dataset

TINY_HYPER = AmortizerHyper(hidden_width=4, epochs=3, batch_size=0, patience=2)


class TestLabeling:
    def test_every_frame_labeled(self, cfg):
        data = synthetic_dataset(episodes=3, steps=2)
        labeled = amortizer.label_dataset(data, cfg)
        assert len(labeled) == len(data)
        assert labeled.labels.shape == (len(data),)
        assert np.all(np.isfinite(labeled.labels))
        assert data.labels is None


class TestTraining:
    def test_bounds_from_train_labels(self):
        data = synthetic_dataset(labeled=True)
        model, report = amortizer.train_amortizer(data, TINY_HYPER)
        train_labels = data.labels[data.split == 0]
        assert model.bounds.beta0 == pytest.approx(train_labels.min())
        assert model.bounds.beta1 == pytest.approx(train_labels.max())
        assert report["bounds"] == {"beta0": model.bounds.beta0, "beta1": model.bounds.beta1}
        assert report["test"]["samples"] == 10
        assert (model.keypoint_count, model.history_length) == (KEYPOINTS, HISTORY)

    def test_unlabeled_dataset(self):
        with pytest.raises(ValidationError):
            amortizer.train_amortizer(synthetic_dataset(), TINY_HYPER)

    def test_constant_labels(self):
        data = synthetic_dataset(labeled=True)
        data.labels = np.full(len(data), 0.5)
        with pytest.raises(ValidationError):
            amortizer.train_amortizer(data, TINY_HYPER)

    def test_evaluation_needs_labels(self):
        with pytest.raises(ValidationError):
            amortizer.evaluate_amortizer(SyntheticModels().amortizer(), synthetic_dataset())


class TestCost:
    def test_batch_costs_in_unit_interval(self):
        model = SyntheticModels().amortizer()
        data = synthetic_dataset()
        costs, clamped = amortizer.c_link_batch(model, data.features)
        assert costs.shape == (len(data),)
        assert np.all((costs >= 0.0) & (costs <= 1.0))
        assert 0 <= clamped <= len(data)

    def test_single_matches_batch(self):
        model = SyntheticModels().amortizer()
        hist = history(3)
        costs, _ = amortizer.c_link_batch(model, hist.features()[None, :])
        assert amortizer.c_link(model, hist) == pytest.approx(costs[0])

    def test_narrow_bounds_clamp(self):
        model = SyntheticModels(bounds=(100.0, 101.0)).amortizer()
        costs, clamped = amortizer.c_link_batch(model, synthetic_dataset().features)
        np.testing.assert_array_equal(costs, 1.0)
        assert clamped == 30

    def test_profile(self):
        model = SyntheticModels().amortizer()
        data = synthetic_dataset()
        profile = amortizer.linking_profile(model, [data.features[:3], data.features[5:10]])
        assert profile.shape == (3,)
        assert amortizer.linking_profile(model, []).shape == (0,)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        model = SyntheticModels(seed=2).amortizer()
        path = amortizer.save_amortizer(tmp_path / "cost.npz", model, {"seed": 2})
        loaded = amortizer.load_amortizer(path)
        features = synthetic_dataset().features
        np.testing.assert_array_equal(amortizer.link_theta_batch(loaded, features),
                                      amortizer.link_theta_batch(model, features))
        assert loaded.bounds == model.bounds

    def test_wrong_kind(self, tmp_path):
        path = save_dynamics(tmp_path / "dyn.npz", SyntheticModels().dynamics(), {"seed": 0})
        with pytest.raises(CheckpointError):
            amortizer.load_amortizer(path)
