"""
Exploration for data generation and scripted ties.

The exploration policy mixes uniform random actions with steps of a scripted
approach controller that carries the strap over the hook and down behind it,
so that threaded states show up in the generated data.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ..models import (MAX_BAR, MAX_ROTATION, MAX_TRANSLATION, ActionPair, WorldState,
                      clip_action_vectors)
from ..utils.config import HarnessConfig
from ..utils.logging import get_operation_logger
from . import geometry, keypoints, linking, rope_sim

_log = get_operation_logger(__name__)


class ApproachController:
    """
    Proportional controller through three waypoints in the hook frame.

    1. above the hook mouth on the anchor (-y) side
    2. across, above the C, to the far (+y) side
    3. down behind the hook, below the arc

    Waypoints follow the current bar angle. The controlled point is the
    grasped strap end.
    """

    def __init__(self, gain: float = 0.5, tolerance: float = 0.005, lift: float = 0.04,
                 drop: float = 0.05):
        self.gain = gain
        self.tolerance = tolerance
        self.lift = lift
        self.drop = drop
        self.index = 0

    @property
    def done(self) -> bool:
        return self.index >= 3

    def waypoints(self, world: WorldState) -> np.ndarray:
        """World-frame waypoints at the world's bar angle, shape (3, 3)."""
        shape = world.hook
        top = -shape.throat_depth + shape.radius
        bottom = -shape.throat_depth - shape.radius
        x = shape.radius
        local = np.array([
            [x, -self.lift, top + self.lift],
            [x, self.lift, top + self.lift],
            [x, 0.75 * self.lift, bottom - self.drop],
        ])
        return geometry.hook_pose(shape, world.bar_angle).apply(local)

    def action(self, world: WorldState) -> ActionPair:
        """Next robot action; the bar action is zero."""
        point = rope_sim.gripper_point(world.gripper, world.scene.grip_offset)
        targets = self.waypoints(world)
        while not self.done and np.linalg.norm(targets[self.index] - point) < self.tolerance:
            self.index += 1
        if self.done:
            return ActionPair.no_change()
        move = self.gain * (targets[self.index] - point)
        norm = np.linalg.norm(move)
        if norm > MAX_TRANSLATION:
            move *= MAX_TRANSLATION / norm
        return ActionPair(np.concatenate([move, np.zeros(3)]), 0.0)


def uniform_action(rng: np.random.Generator) -> ActionPair:
    """Uniform sample of the action box, translation scaled into the 1 cm ball."""
    bounds = np.array([MAX_TRANSLATION] * 3 + [MAX_ROTATION] * 3 + [MAX_BAR])
    vector = rng.uniform(-bounds, bounds)
    return ActionPair.from_vector(clip_action_vectors(vector[None, :])[0])


class ExplorationPolicy:
    """Per step: the approach controller with probability ``approach_fraction``, else uniform."""

    def __init__(self, rng: np.random.Generator, approach_fraction: float = 0.3,
                 controller: Optional[ApproachController] = None):
        self.rng = rng
        self.approach_fraction = approach_fraction
        self.controller = controller or ApproachController()

    def action(self, world: WorldState) -> ActionPair:
        if self.rng.random() < self.approach_fraction:
            return self.controller.action(world)
        return uniform_action(self.rng)


def outside_workspace(world: WorldState) -> bool:
    """Whether the gripper left the cube around the bar pivot."""
    offset = world.gripper.translation - np.asarray(world.hook.pivot)
    return bool(np.any(np.abs(offset) > world.scene.workspace_half_extent))


@dataclass
class TieTrajectory:
    """
    A scripted tie run.

    Attributes:
        worlds: World after every step, initial world first
        features: History features per world, shape (T, H*(4n+8))
        links: Exact linking value per world
        success: Goal test result on the final world
    """
    worlds: List[WorldState] = field(default_factory=list)
    features: Optional[np.ndarray] = None
    links: Optional[np.ndarray] = None
    success: bool = False


def scripted_tie(cfg: HarnessConfig, hook_id="H1", material_id="M1", slack: float = 0.0,
                 seed: int = 0, max_steps: int = 200, settle_steps: Optional[int] = None,
                 check_goal: bool = True) -> TieTrajectory:
    """
    Drive the approach controller from a jittered start until it finishes, then let the strap settle.

    Raises:
        SimulationDivergedError: If the simulator diverges
    """
    rng = np.random.default_rng(seed)
    world = rope_sim.initial_world(cfg, hook_id, material_id, slack, rng=rng)
    world, _ = rope_sim.settle(world, cfg.data.settle_steps, min_steps=cfg.data.settle_steps)
    world.step_index = 0
    cameras = keypoints.make_cameras(cfg)
    history = keypoints.History(cfg.keypoints.history)
    history.push(keypoints.extract(world, cameras, cfg.keypoints.count))
    controller = ApproachController()
    trajectory = TieTrajectory(worlds=[world])
    rows = [history.features()]
    tail = cfg.data.settle_steps if settle_steps is None else settle_steps
    for _ in range(max_steps):
        action = controller.action(world)
        world = rope_sim.step(world, action)
        history.push(keypoints.extract(world, cameras, cfg.keypoints.count), action)
        trajectory.worlds.append(world)
        rows.append(history.features())
        if controller.done:
            break
    for _ in range(tail):
        world = rope_sim.step(world)
        history.push(keypoints.extract(world, cameras, cfg.keypoints.count), ActionPair.no_change())
        trajectory.worlds.append(world)
        rows.append(history.features())
    trajectory.features = np.stack(rows)
    trajectory.links = np.array([linking.world_link(w, seed=seed) for w in trajectory.worlds])
    if check_goal:
        trajectory.success = rope_sim.goal_reached(world, cfg.goal, seed=seed)
    _log.debug(f"Scripted tie seed={seed} steps={len(trajectory.worlds)} "
               f"final link={trajectory.links[-1]:.3f} success={trajectory.success}")
    return trajectory
