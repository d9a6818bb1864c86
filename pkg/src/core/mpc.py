"""
Turn-taking sampling MPC.

The robot and the bar alternate turns. On its turn an agent samples K
candidate actions while the other agent holds still, rolls every candidate
through the learned dynamics for R steps (the candidate at the first step,
no change afterwards), scores the predicted histories with the learned
linking cost plus small action penalties and executes the best one in the
simulator. Goal tests run on cloned worlds every few turns.

Trial logs are JSONL: a header line, one ``turn`` record per executed turn,
one ``goal`` record per goal check and a closing ``summary`` record.
"""

import time
from contextlib import ExitStack
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from ..models import ActionPair, KeypointObservation, TrialResult, TurnRecord, WorldState, clip_action_vectors
from ..models.enums import AgentId, BarMode, BaselineMode, Method, SelectionMode
from ..utils.config import HarnessConfig, PlannerConfig
from ..utils.exceptions import ShapeMismatchError, SimulationDivergedError, SingularConfigurationError
from ..utils.logging import create_operation_context, get_operation_logger
from ..utils.persistence import JsonlWriter
from ..utils.validators import require_shape
from . import amortizer, dynamics_model, keypoints, linking, rope_sim
from .amortizer import AmortizerModel
from .dynamics_model import DynamicsModel

TRIAL_FORMAT = "strap-trial"

_log = get_operation_logger(__name__)

Scorer = Callable[[np.ndarray, keypoints.History, "PlannerModels", PlannerConfig], Tuple[np.ndarray, int]]


@dataclass
class PlannerModels:
    """The learned dynamics and linking cost a planner turn needs."""
    dynamics: DynamicsModel
    amortizer: AmortizerModel

    def __post_init__(self):
        dyn = (self.dynamics.keypoint_count, self.dynamics.history_length)
        cost = (self.amortizer.keypoint_count, self.amortizer.history_length)
        if dyn != cost:
            raise ShapeMismatchError("Dynamics and cost models disagree on keypoints/history",
                                     expected=dyn, actual=cost, field="models")

    @property
    def keypoint_count(self) -> int:
        return self.dynamics.keypoint_count

    @property
    def history_length(self) -> int:
        return self.dynamics.history_length


class TrialEnvironment:
    """
    The live world of one trial with its cameras and observation history.

    Only :meth:`execute` advances the world; goal checks run on copies. With a
    ``trajectory`` writer every simulator state, the initial one included, is
    logged as one step record; ``trajectory_links`` adds the exact linking
    value to each record.
    """

    def __init__(self, world: WorldState, cfg: HarnessConfig, keypoint_count: int, history_length: int,
                 trajectory: Optional[JsonlWriter] = None, trajectory_links: bool = False):
        self.world = world
        self.cfg = cfg
        self.keypoint_count = keypoint_count
        self.cameras = keypoints.make_cameras(cfg)
        self.history = keypoints.History(history_length)
        self.history.push(self.observe())
        self.bar_angles = [world.bar_angle]
        self.trajectory = trajectory
        self.trajectory_links = trajectory_links
        self._record_frame()

    def observe(self) -> KeypointObservation:
        return keypoints.extract(self.world, self.cameras, self.keypoint_count)

    def execute(self, action: ActionPair) -> KeypointObservation:
        """
        Step the simulator with an action and record the new observation.

        Raises:
            SimulationDivergedError: If the simulator diverges
        """
        self.world = rope_sim.step(self.world, action)
        obs = self.observe()
        self.history.push(obs, action)
        self.bar_angles.append(self.world.bar_angle)
        self._record_frame(action)
        return obs

    def goal(self, threshold: float, seed: int) -> rope_sim.GoalCheck:
        return rope_sim.goal_check(self.world, self.cfg.goal, threshold, seed)

    def _record_frame(self, action: Optional[ActionPair] = None):
        if self.trajectory is None:
            return
        link = None
        if self.trajectory_links:
            try:
                link = linking.world_link(self.world, seed=self.world.step_index)
            except SingularConfigurationError as e:
                _log.debug(f"No linking value for step {self.world.step_index}: {e}")
        self.trajectory.write(rope_sim.trajectory_record(self.world, action, link=link))


def sample_candidates(agent: AgentId, count: int, cfg: PlannerConfig, rng: np.random.Generator) -> np.ndarray:
    """
    Zero-mean Gaussian candidates for one agent, clipped to the action bounds.

    The other agent's components are exactly zero.

    Returns:
        Joint action vectors, shape (count, 7)
    """
    candidates = np.zeros((count, 7))
    if agent is AgentId.ROB:
        std = np.array([cfg.rob_translation_std] * 3 + [cfg.rob_rotation_std] * 3)
        candidates[:, :6] = rng.normal(0.0, 1.0, (count, 6)) * std
    else:
        candidates[:, 6] = rng.normal(0.0, cfg.bar_std, count)
    return clip_action_vectors(candidates)


def score_candidates(candidates: np.ndarray, history: keypoints.History, models: PlannerModels,
                     cfg: PlannerConfig) -> Tuple[np.ndarray, int]:
    """
    Predicted cost of every candidate.

    Each candidate is rolled out ``cfg.rollout_depth`` steps from the current
    history; the final predicted history is scored with the linking cost.

    Returns:
        (costs (K,), number of candidates whose linking cost was clamped)
    """
    if history.capacity != models.history_length:
        raise ShapeMismatchError("History length does not match the models",
                                 expected=(models.history_length,), actual=(history.capacity,), field="history")
    candidates = require_shape(candidates, (None, 7), "candidates")
    count = candidates.shape[0]
    latest = history.latest
    features = np.repeat(history.features()[None, :], count, axis=0)
    current = np.repeat(latest.flat_keypoints()[None, :], count, axis=0)
    bars = np.full(count, latest.bar_angle)
    still = np.zeros_like(candidates)
    for depth in range(cfg.rollout_depth):
        actions = candidates if depth == 0 else still
        current, bars = dynamics_model.predict_batch(models.dynamics, features, actions, current, bars)
        features = keypoints.roll_features(features, keypoints.entry_features(current, bars, actions))
    link_cost, clamped = amortizer.c_link_batch(models.amortizer, features)
    smooth = np.sum(candidates ** 2, axis=1)
    effort = np.linalg.norm(candidates[:, :3], axis=1)
    return cfg.w_link * link_cost + cfg.w_smooth * smooth + cfg.w_effort * effort, clamped


def select(costs: np.ndarray, candidates: np.ndarray, mode: SelectionMode = SelectionMode.ARGMIN,
           temperature: float = 0.05) -> Tuple[int, np.ndarray]:
    """
    Pick the executed action from scored candidates.

    Returns:
        (candidate index, action vector); the index is -1 for an MPPI average
    """
    if mode is SelectionMode.ARGMIN:
        index = int(np.argmin(costs))
        return index, candidates[index].copy()
    weights = np.exp(-(costs - costs.min()) / temperature)
    weights /= weights.sum()
    return -1, clip_action_vectors((weights @ candidates)[None, :])[0]


def plan_turn(agent: AgentId, history: keypoints.History, models: PlannerModels, cfg: PlannerConfig,
              rng: np.random.Generator, turn: int = 0, scorer: Optional[Scorer] = None
              ) -> Tuple[ActionPair, TurnRecord]:
    """
    Sample, score and select one agent's action.

    ``scorer`` replaces :func:`score_candidates` (stub models in tests).

    Returns:
        (action to execute, turn record without the post-execution observation)
    """
    start = time.perf_counter()
    candidates = sample_candidates(agent, cfg.candidates, cfg, rng)
    costs, clamped = (scorer or score_candidates)(candidates, history, models, cfg)
    index, vector = select(costs, candidates, SelectionMode(cfg.selection), cfg.mppi_temperature)
    if clamped:
        _log.warning(f"Turn {turn} ({agent}): linking cost clamped for {clamped}/{cfg.candidates} candidates")
    action = ActionPair.from_vector(vector)
    record = TurnRecord(turn, agent, candidates, np.asarray(costs, dtype=np.float64), index, action,
                        clamped=clamped, wall_clock=time.perf_counter() - start)
    return action, record


def robot_turn(history: keypoints.History, models: PlannerModels, cfg: PlannerConfig,
               rng: np.random.Generator, turn: int = 0, scorer: Optional[Scorer] = None
               ) -> Tuple[ActionPair, TurnRecord]:
    """Robot turn: candidates move the gripper, the bar is held still."""
    return plan_turn(AgentId.ROB, history, models, cfg, rng, turn, scorer)


def bar_turn(history: keypoints.History, models: PlannerModels, cfg: PlannerConfig,
             rng: np.random.Generator, turn: int = 0, scorer: Optional[Scorer] = None
             ) -> Tuple[ActionPair, TurnRecord]:
    """Bar turn: candidates rotate the bar, the gripper is held still."""
    return plan_turn(AgentId.BAR, history, models, cfg, rng, turn, scorer)


def rescore_turn(record: TurnRecord, history: keypoints.History, models: PlannerModels,
                 cfg: PlannerConfig) -> Tuple[np.ndarray, int]:
    """
    Recompute a record's candidate costs from the history it was planned on.

    Returns:
        (costs, argmin index)
    """
    costs, _ = score_candidates(record.candidates, history, models, cfg)
    return costs, int(np.argmin(costs))


def goal_threshold(cfg: HarnessConfig, models: Optional[PlannerModels] = None) -> float:
    """Linking threshold of the goal test: a fraction of the cost's upper bound when known."""
    if models is not None and models.amortizer.bounds.beta1 > 0:
        return cfg.goal.threshold_fraction * models.amortizer.bounds.beta1
    return cfg.goal.threshold


def _trial_header(trial_id: str, method: Method, seed: int, provenance: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    return {"format": TRIAL_FORMAT, "trial_id": trial_id, "method": str(method), "seed": seed,
            "provenance": provenance or {}}


def _run(world: WorldState, models: PlannerModels, cfg: HarnessConfig, seed: int, method: Method,
         agents: Sequence[AgentId], trial_id: str, log_path: Optional[Path],
         provenance: Optional[Dict[str, Any]], include_timing: bool, scorer: Optional[Scorer],
         trajectory_path: Optional[Path] = None, trajectory_links: bool = False) -> TrialResult:
    planner = cfg.planner
    rng = np.random.default_rng(seed)
    threshold = goal_threshold(cfg, models)
    result = TrialResult(trial_id, method, seed)
    writer: Optional[JsonlWriter] = None

    def check(turn: int) -> bool:
        outcome = env.goal(threshold, seed + turn)
        result.goal_checks.append((turn, outcome.passed))
        if writer:
            writer.write({"type": "goal", "turn": turn, "passed": outcome.passed,
                          "min_link": outcome.min_link, "diverged": outcome.diverged})
        return outcome.passed

    # own logger: grid workers run trials concurrently
    trial_log = get_operation_logger(__name__)
    op = create_operation_context("trial", trial_id)
    trial_log.start_operation(op, f"Trial {trial_id}", method=str(method), seed=seed, horizon=planner.horizon)
    with ExitStack() as stack:
        if log_path:
            writer = stack.enter_context(JsonlWriter(log_path, _trial_header(trial_id, method, seed, provenance)))
        trajectory = None
        if trajectory_path:
            header = rope_sim.trajectory_header(world, trial_id=trial_id, method=str(method), seed=seed,
                                                provenance=provenance or {})
            trajectory = stack.enter_context(JsonlWriter(trajectory_path, header))
        env = TrialEnvironment(world, cfg, models.keypoint_count, models.history_length,
                               trajectory, trajectory_links)
        result.bar_angles = env.bar_angles
        turn = 0
        while turn < planner.horizon:
            if turn % planner.goal_check_period == 0 and check(turn):
                result.success = True
                break
            agent = agents[turn % len(agents)]
            action, record = plan_turn(agent, env.history, models, planner, rng, turn, scorer)
            try:
                record.observation = env.execute(action)
            except SimulationDivergedError as e:
                result.diverged = True
                result.error = str(e)
                _log.warning(f"Trial {trial_id} diverged at turn {turn}: {e}")
                break
            result.records.append(record)
            if writer:
                writer.write({"type": "turn", **record.to_dict(include_timing)})
            turn += 1
        result.turns_used = turn
        if not result.success and not result.diverged and planner.horizon > 0:
            if not result.goal_checks or result.goal_checks[-1][0] != turn:
                result.success = check(turn)
        if writer:
            writer.write({"type": "summary", **result.summary()})
    trial_log.end_operation(result.success, "success" if result.success else "failure",
                            turns=result.turns_used, diverged=result.diverged)
    return result


def run_trial(world: WorldState, models: PlannerModels, cfg: HarnessConfig, seed: int,
              trial_id: str = "trial", log_path: Optional[Path] = None,
              provenance: Optional[Dict[str, Any]] = None, include_timing: bool = False,
              scorer: Optional[Scorer] = None,
              trajectory_path: Optional[Path] = None, trajectory_links: bool = False) -> TrialResult:
    """
    Closed-loop turn-taking trial from a settled, grasped initial world.

    Turns alternate robot, bar, robot, ... until the goal test passes or the
    horizon is spent. The goal is tested before turn 0, every
    ``goal_check_period`` turns and once more at the end. A diverged
    simulator ends the trial as a failure.
    """
    world = world.copy()
    world.bar_mode = BarMode.KINEMATIC
    return _run(world, models, cfg, seed, Method.TURN_TAKING, (AgentId.ROB, AgentId.BAR), trial_id,
                log_path, provenance, include_timing, scorer, trajectory_path, trajectory_links)


def baseline_trial(world: WorldState, models: PlannerModels, cfg: HarnessConfig, mode: BaselineMode,
                   seed: int, trial_id: str = "trial", log_path: Optional[Path] = None,
                   provenance: Optional[Dict[str, Any]] = None, include_timing: bool = False,
                   scorer: Optional[Scorer] = None,
                   trajectory_path: Optional[Path] = None, trajectory_links: bool = False) -> TrialResult:
    """
    Single-agent trial: only robot turns.

    ``uncontrolled`` makes the bar a passive damped joint pushed by strap
    contacts; ``fixed`` keeps the bar angle constant.
    """
    world = world.copy()
    if mode is BaselineMode.UNCONTROLLED:
        world.bar_mode = BarMode.PASSIVE
        method = Method.BASELINE_UNCONTROLLED
    else:
        world.bar_mode = BarMode.KINEMATIC
        method = Method.BASELINE_FIXED
    world.bar_velocity = 0.0
    return _run(world, models, cfg, seed, method, (AgentId.ROB,), trial_id, log_path, provenance,
                include_timing, scorer, trajectory_path, trajectory_links)


def trial_for_method(method: Method, world: WorldState, models: PlannerModels, cfg: HarnessConfig,
                     seed: int, **kwargs) -> TrialResult:
    """Dispatch to the turn-taking trial or the matching baseline."""
    if method.is_baseline:
        return baseline_trial(world, models, cfg, method.baseline_mode, seed, **kwargs)
    return run_trial(world, models, cfg, seed, **kwargs)
