"""Tests for the turn-taking planner and closed-loop trials."""

from dataclasses import replace

import numpy as np
import pytest

from src.core import keypoints, linking, mpc
from src.models.enums import AgentId, BaselineMode, Method, SelectionMode
from src.utils.exceptions import ShapeMismatchError
from src.utils.persistence import TRAJECTORY_FORMAT, read_jsonl
from tests.fixtures import KEYPOINTS, RecordingScorer, SyntheticModels, history, tiny_config


class TestModels:
    def test_mismatched_models(self):
        with pytest.raises(ShapeMismatchError):
            mpc.PlannerModels(SyntheticModels().dynamics(), SyntheticModels(count=KEYPOINTS + 1).amortizer())

    def test_shapes_exposed(self, models):
        assert models.keypoint_count == KEYPOINTS
        assert models.history_length == 3


class TestSampling:
    def test_robot_candidates_leave_bar_alone(self, cfg):
        candidates = mpc.sample_candidates(AgentId.ROB, 64, cfg.planner, np.random.default_rng(0))
        assert candidates.shape == (64, 7)
        np.testing.assert_array_equal(candidates[:, 6], 0.0)
        assert np.all(np.linalg.norm(candidates[:, :3], axis=1) <= 0.01 + 1e-12)
        assert np.all(np.abs(candidates[:, 3:6]) <= 0.05)

    def test_bar_candidates_leave_robot_alone(self, cfg):
        candidates = mpc.sample_candidates(AgentId.BAR, 64, cfg.planner, np.random.default_rng(0))
        np.testing.assert_array_equal(candidates[:, :6], 0.0)
        assert np.all(np.abs(candidates[:, 6]) <= 0.05)
        assert np.any(candidates[:, 6] != 0.0)

    def test_seeded(self, cfg):
        a = mpc.sample_candidates(AgentId.ROB, 8, cfg.planner, np.random.default_rng(4))
        b = mpc.sample_candidates(AgentId.ROB, 8, cfg.planner, np.random.default_rng(4))
        np.testing.assert_array_equal(a, b)


class TestSelect:
    def test_argmin_ties_go_to_lowest_index(self):
        candidates = np.arange(21.0).reshape(3, 7) * 1e-3
        index, action = mpc.select(np.array([1.0, 0.2, 0.2]), candidates)
        assert index == 1
        np.testing.assert_array_equal(action, candidates[1])

    def test_mppi_weighted_average(self):
        candidates = np.zeros((2, 7))
        candidates[0, 6] = 0.04
        candidates[1, 6] = -0.02
        index, action = mpc.select(np.array([0.3, 0.3]), candidates, SelectionMode.MPPI)
        assert index == -1
        assert action[6] == pytest.approx(0.01)

    def test_mppi_prefers_cheap_candidates(self):
        candidates = np.zeros((2, 7))
        candidates[0, 0] = 0.005
        candidates[1, 0] = -0.005
        _, action = mpc.select(np.array([0.0, 10.0]), candidates, SelectionMode.MPPI, temperature=0.05)
        assert action[0] == pytest.approx(0.005)


class TestScoring:
    def test_costs_per_candidate(self, cfg, models):
        candidates = mpc.sample_candidates(AgentId.ROB, 8, cfg.planner, np.random.default_rng(0))
        costs, clamped = mpc.score_candidates(candidates, history(3), models, cfg.planner)
        assert costs.shape == (8,)
        assert np.all(np.isfinite(costs))
        assert 0 <= clamped <= 8

    def test_identical_candidates_score_equal(self, cfg, models):
        candidates = np.zeros((4, 7))
        costs, _ = mpc.score_candidates(candidates, history(2), models, cfg.planner)
        np.testing.assert_allclose(costs, costs[0])

    def test_action_penalties(self, cfg, models):
        candidates = np.zeros((2, 7))
        candidates[1, 0] = 0.01
        planner = cfg.planner
        costs, _ = mpc.score_candidates(candidates, history(2), models, planner)
        link_only = replace(planner, w_smooth=0.0, w_effort=0.0)
        base, _ = mpc.score_candidates(candidates, history(2), models, link_only)
        penalty = planner.w_smooth * 1e-4 + planner.w_effort * 0.01
        assert costs[1] - base[1] == pytest.approx(penalty)
        assert costs[0] == pytest.approx(base[0])

    def test_history_mismatch(self, cfg, models):
        hist = keypoints.History(5).push(history(1).latest)
        with pytest.raises(ShapeMismatchError):
            mpc.score_candidates(np.zeros((2, 7)), hist, models, cfg.planner)


class TestPlanTurn:
    def test_executes_best_scored_candidate(self, cfg, models):
        scorer = RecordingScorer(target=[0.004, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        action, record = mpc.robot_turn(history(2), models, cfg.planner, np.random.default_rng(0), 3, scorer)
        distances = np.linalg.norm(record.candidates - scorer.target, axis=1)
        assert record.chosen_index == int(np.argmin(distances))
        np.testing.assert_array_equal(action.vector(), record.candidates[record.chosen_index])
        assert record.turn == 3
        assert record.agent is AgentId.ROB
        assert len(scorer.calls) == 1

    def test_bar_turn(self, cfg, models):
        action, record = mpc.bar_turn(history(2), models, cfg.planner, np.random.default_rng(0),
                                      scorer=RecordingScorer())
        np.testing.assert_array_equal(action.a_rob, 0.0)
        assert record.agent is AgentId.BAR
        assert abs(action.a_bar) == pytest.approx(np.abs(record.candidates[:, 6]).min())

    def test_clamped_count_recorded(self, cfg, models):
        _, record = mpc.plan_turn(AgentId.ROB, history(2), models, cfg.planner, np.random.default_rng(0),
                                  scorer=RecordingScorer(clamped=2))
        assert record.clamped == 2

    def test_rescore_matches_planning(self, cfg, models):
        hist = history(3)
        _, record = mpc.robot_turn(hist, models, cfg.planner, np.random.default_rng(1))
        costs, index = mpc.rescore_turn(record, hist, models, cfg.planner)
        np.testing.assert_array_equal(costs, record.costs)
        assert index == record.chosen_index


class TestGoalThreshold:
    def test_fraction_of_upper_bound(self, cfg, models):
        assert mpc.goal_threshold(cfg, models) == pytest.approx(0.8)

    def test_fallback(self, cfg):
        assert mpc.goal_threshold(cfg) == cfg.goal.threshold
        assert mpc.goal_threshold(cfg, SyntheticModels(bounds=(-2.0, -1.0)).planner()) == cfg.goal.threshold


class TestTrial:
    def test_agents_alternate(self, cfg, models, world, scorer):
        result = mpc.run_trial(world, models, cfg, seed=0, scorer=scorer)
        assert [str(r.agent) for r in result.records] == ["rob", "bar", "rob", "bar"]
        assert [r.turn for r in result.records] == [0, 1, 2, 3]
        assert result.goal_checks == [(0, False), (2, False), (4, False)]
        assert result.turns_used == 4
        assert len(result.bar_angles) == 5
        assert not result.success
        assert result.method is Method.TURN_TAKING

    def test_other_agent_holds_still(self, cfg, models, world, scorer):
        result = mpc.run_trial(world, models, cfg, seed=1, scorer=scorer)
        for record in result.records:
            if record.agent is AgentId.ROB:
                np.testing.assert_array_equal(record.candidates[:, 6], 0.0)
            else:
                np.testing.assert_array_equal(record.candidates[:, :6], 0.0)
            assert record.observation is not None

    def test_input_world_untouched(self, cfg, models, world, scorer):
        before = world.rope.positions.copy()
        mpc.run_trial(world, models, cfg, seed=0, scorer=scorer)
        np.testing.assert_array_equal(world.rope.positions, before)
        assert world.step_index == 0

    def test_zero_horizon(self, models, world, scorer):
        result = mpc.run_trial(world, models, tiny_config(planner={"horizon": 0}), seed=0, scorer=scorer)
        assert result.turns_used == 0
        assert result.goal_checks == []
        assert not result.success
        assert scorer.calls == []

    def test_seeded_trials_repeat(self, cfg, models, world):
        a = mpc.run_trial(world, models, cfg, seed=5)
        b = mpc.run_trial(world, models, cfg, seed=5)
        np.testing.assert_array_equal(a.bar_angles, b.bar_angles)
        for ra, rb in zip(a.records, b.records):
            np.testing.assert_array_equal(ra.chosen.vector(), rb.chosen.vector())

    def test_trial_log(self, tmp_path, cfg, models, world, scorer):
        path = tmp_path / "trial.jsonl"
        mpc.run_trial(world, models, cfg, seed=0, trial_id="t0", log_path=path, scorer=scorer,
                      provenance={"seed": 0})
        header, records = read_jsonl(path)
        assert header["format"] == mpc.TRIAL_FORMAT
        assert header["trial_id"] == "t0"
        assert [r["type"] for r in records] == ["goal", "turn", "turn", "goal", "turn", "turn", "goal", "summary"]
        assert records[-1]["turns_used"] == 4
        assert "wall_clock" not in records[1]

    def test_log_bytes_repeat(self, tmp_path, cfg, models, world):
        for name in ("a.jsonl", "b.jsonl"):
            mpc.run_trial(world, models, cfg, seed=2, log_path=tmp_path / name, scorer=RecordingScorer())
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_trajectory_log(self, tmp_path, cfg, models, world, scorer):
        path = tmp_path / "traj.jsonl"
        result = mpc.run_trial(world, models, cfg, seed=0, trial_id="t0", scorer=scorer,
                               trajectory_path=path, trajectory_links=True)
        header, records = read_jsonl(path)
        assert header["format"] == TRAJECTORY_FORMAT
        assert header["trial_id"] == "t0"
        assert header["particles"] == world.rope.count
        assert [r["step"] for r in records] == list(range(result.turns_used + 1))
        assert [r["bar_angle"] for r in records] == pytest.approx(result.bar_angles)
        assert records[0]["link"] == pytest.approx(linking.world_link(world))
        assert all(np.isfinite(r["link"]) for r in records)

    def test_trajectory_without_links(self, tmp_path, cfg, models, world, scorer):
        path = tmp_path / "traj.jsonl"
        result = mpc.baseline_trial(world, models, cfg, BaselineMode.FIXED, seed=0, scorer=scorer,
                                    trajectory_path=path)
        header, records = read_jsonl(path)
        assert header["method"] == "baseline-fixed"
        assert len(records) == result.turns_used + 1
        assert all("link" not in r for r in records)
        assert all(len(r["positions"]) == world.rope.count for r in records)


class TestBaselines:
    def test_fixed_bar_never_moves(self, cfg, models, world, scorer):
        result = mpc.baseline_trial(world, models, cfg, BaselineMode.FIXED, seed=0, scorer=scorer)
        assert result.method is Method.BASELINE_FIXED
        assert all(r.agent is AgentId.ROB for r in result.records)
        assert len(set(result.bar_angles)) == 1

    def test_uncontrolled_robot_only(self, cfg, models, world, scorer):
        result = mpc.baseline_trial(world, models, cfg, BaselineMode.UNCONTROLLED, seed=0, scorer=scorer)
        assert result.method is Method.BASELINE_UNCONTROLLED
        assert len(result.records) == 4
        assert all(r.agent is AgentId.ROB for r in result.records)

    def test_dispatch(self, cfg, models, world, scorer):
        result = mpc.trial_for_method(Method.BASELINE_FIXED, world, models, cfg, 0, scorer=scorer)
        assert result.method is Method.BASELINE_FIXED
        result = mpc.trial_for_method(Method.TURN_TAKING, world, models, cfg, 0, scorer=scorer)
        assert result.method is Method.TURN_TAKING
