"""
Core data models for the strap tying control stack.

This module defines the value types shared by the simulator, the learned
models, the planner and the evaluation harness: rigid poses, polylines, hook
and camera descriptions, the simulated world, actions, keypoint observations,
linking results and planner/trial records.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from ..utils.config import SceneConfig, SimConfig
from ..utils.exceptions import GeometryError, ValidationError
from .enums import AgentId, BarMode, HookFamily, MaterialId, Method

EULER_SEQUENCE = "XYZ"
TWO_PI = 2.0 * np.pi

MAX_TRANSLATION = 0.01
MAX_ROTATION = 0.05
MAX_BAR = 0.05
BOUND_TOLERANCE = 1e-12


def wrap_angle(angle: float) -> float:
    """Wrap an angle to [0, 2π)."""
    wrapped = float(np.mod(angle, TWO_PI))
    return 0.0 if wrapped >= TWO_PI else wrapped


def wrap_signed(angle):
    """Wrap angles (scalar or array) to (−π, π]."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(angle, dtype=np.float64), TWO_PI)
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


@dataclass(frozen=True, eq=False)
class Pose6:
    """
    Rigid pose: translation (m) plus rotation.

    Rotations are held as scipy Rotation objects; external I/O uses
    intrinsic XYZ Euler angles (radians).

    Attributes:
        translation: Translation vector, shape (3,)
        rotation: Rotation from the local frame to the parent frame
    """
    translation: np.ndarray
    rotation: Rotation

    def __post_init__(self):
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> "Pose6":
        """Return the identity pose."""
        return cls(np.zeros(3), Rotation.identity())

    @classmethod
    def from_euler(cls, translation, euler) -> "Pose6":
        """Build a pose from a translation and intrinsic XYZ Euler angles."""
        return cls(np.asarray(translation, dtype=np.float64),
                   Rotation.from_euler(EULER_SEQUENCE, np.asarray(euler, dtype=np.float64)))

    @classmethod
    def from_vector(cls, vector) -> "Pose6":
        """Build a pose from (x, y, z, rx, ry, rz)."""
        vector = np.asarray(vector, dtype=np.float64).reshape(6)
        return cls.from_euler(vector[:3], vector[3:])

    def euler(self) -> np.ndarray:
        """Return intrinsic XYZ Euler angles (radians)."""
        return self.rotation.as_euler(EULER_SEQUENCE)

    def as_vector(self) -> np.ndarray:
        """Return (x, y, z, rx, ry, rz)."""
        return np.concatenate([self.translation, self.euler()])

    def matrix(self) -> np.ndarray:
        """Return the 3x3 rotation matrix."""
        return self.rotation.as_matrix()

    def compose(self, other: "Pose6") -> "Pose6":
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return Pose6(self.translation + self.rotation.apply(other.translation),
                     self.rotation * other.rotation)

    def inverse(self) -> "Pose6":
        """Return the inverse transform."""
        inv = self.rotation.inv()
        return Pose6(-inv.apply(self.translation), inv)

    def apply(self, points) -> np.ndarray:
        """Map points (3,) or (M, 3) from the local frame to the parent frame."""
        points = np.asarray(points, dtype=np.float64)
        return self.rotation.apply(points) + self.translation


@dataclass(frozen=True, eq=False)
class Polyline3:
    """
    Ordered list of 3-D vertices.

    Attributes:
        vertices: Vertex array, shape (M, 3), M >= 2
        closed: Whether the last vertex connects back to the first
    """
    vertices: np.ndarray
    closed: bool = False

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=np.float64)
        if vertices.ndim != 2 or vertices.shape[1] != 3 or vertices.shape[0] < 2:
            raise GeometryError("Polyline needs at least 2 vertices of dimension 3",
                                field="vertices", value=vertices.shape)
        if self.closed and vertices.shape[0] < 3:
            raise GeometryError("Closed polyline needs at least 3 vertices",
                                field="vertices", value=vertices.shape)
        if not np.all(np.isfinite(vertices)):
            raise GeometryError("Polyline has non-finite vertices", field="vertices")
        seg = np.linalg.norm(np.diff(vertices, axis=0), axis=1)
        if np.any(seg <= 1e-9):
            raise GeometryError("Consecutive polyline vertices coincide", field="vertices",
                                constraint="segment length > 1e-9 m")
        vertices.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)

    def __len__(self) -> int:
        return self.vertices.shape[0]

    @property
    def count(self) -> int:
        """Number of vertices."""
        return self.vertices.shape[0]

    def segment_vectors(self) -> np.ndarray:
        """Forward differences, including the closing segment when closed."""
        if self.closed:
            return np.roll(self.vertices, -1, axis=0) - self.vertices
        return np.diff(self.vertices, axis=0)

    @property
    def length(self) -> float:
        """Total length including the closing segment when closed."""
        return float(np.linalg.norm(self.segment_vectors(), axis=1).sum())

    def reversed(self) -> "Polyline3":
        """Return the same curve with opposite orientation."""
        return Polyline3(self.vertices[::-1].copy(), self.closed)

    def transformed(self, pose: Pose6) -> "Polyline3":
        """Return the curve moved by a rigid pose."""
        return Polyline3(pose.apply(self.vertices), self.closed)

    def subdivide(self, factor: int = 2) -> "Polyline3":
        """Insert ``factor - 1`` evenly spaced points inside every segment (keeps old vertices)."""
        if factor < 1:
            raise ValidationError("Subdivision factor must be >= 1", field="factor", value=factor)
        seg = self.segment_vectors()
        fractions = np.arange(factor) / factor
        points = self.vertices[:seg.shape[0], None, :] + fractions[None, :, None] * seg[:, None, :]
        points = points.reshape(-1, 3)
        if not self.closed:
            points = np.vstack([points, self.vertices[-1]])
        return Polyline3(points, self.closed)

    def resample(self, count: int) -> "Polyline3":
        """Return ``count`` points spaced uniformly by arc length (open curves keep both ends)."""
        closed_pts = np.vstack([self.vertices, self.vertices[:1]]) if self.closed else self.vertices
        seg = np.linalg.norm(np.diff(closed_pts, axis=0), axis=1)
        arc = np.concatenate([[0.0], np.cumsum(seg)])
        if self.closed:
            targets = np.linspace(0.0, arc[-1], count, endpoint=False)
        else:
            targets = np.linspace(0.0, arc[-1], count)
        resampled = np.column_stack([np.interp(targets, arc, closed_pts[:, k]) for k in range(3)])
        return Polyline3(resampled, self.closed)


@dataclass(frozen=True)
class HookShape:
    """
    Parametric C-shaped hook hanging from the bar pivot.

    Attributes:
        family: Hook family id
        radius: Arc radius (m)
        opening_angle: Angular width of the mouth (rad)
        tilt: Rotation of the C about the stem axis (rad)
        throat_depth: Stem length from the pivot to the arc's top (m)
        samples: Number of polyline vertices M₂
        pivot: Bar pivot in world coordinates (m)
        axis: Bar rotation axis in world coordinates
    """
    family: HookFamily
    radius: float
    opening_angle: float
    tilt: float
    throat_depth: float
    samples: int = 128
    pivot: Tuple[float, float, float] = (0.0, 0.0, 0.40)
    axis: Tuple[float, float, float] = (0.0, 1.0, 0.0)


@dataclass(frozen=True, eq=False)
class Camera:
    """
    Pinhole camera; ``pose`` maps camera coordinates (z forward, x right, y down) to world.

    Attributes:
        name: Camera name (bar, wrist)
        pose: Camera-to-world pose
        focal: Focal length (px)
        cx: Principal point column (px)
        cy: Principal point row (px)
        width: Image width (px)
        height: Image height (px)
    """
    name: str
    pose: Pose6
    focal: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not self.focal > 0:
            raise GeometryError("Camera focal length must be positive", field="focal", value=self.focal)
        if not (0.0 <= self.cx <= self.width and 0.0 <= self.cy <= self.height):
            raise GeometryError("Principal point outside the image", field="principal_point",
                                value=(self.cx, self.cy), constraint=f"inside {self.width}x{self.height}")


@dataclass(frozen=True)
class Material:
    """
    Strap material.

    Attributes:
        id: Material id
        stretch_compliance: XPBD stretch compliance (m/N)
        bending_compliance: XPBD bending compliance (m/N)
        damping: Velocity damping coefficient (1/s)
        tol_stretch: Accepted stretch constraint error after a step (m)
    """
    id: MaterialId
    stretch_compliance: float
    bending_compliance: float
    damping: float
    tol_stretch: float

    def __post_init__(self):
        for name in ("stretch_compliance", "bending_compliance", "damping", "tol_stretch"):
            if getattr(self, name) < 0:
                raise ValidationError(f"Material {name} must be >= 0", field=name,
                                      value=getattr(self, name), constraint=">= 0")


@dataclass(eq=False)
class RopeState:
    """
    Particle chain.

    Attributes:
        positions: Particle positions, shape (N, 3)
        velocities: Particle velocities, shape (N, 3)
        rest_length: Rest segment length (m)
        particle_mass: Mass of one particle (kg)
        radius: Strap radius (m)
        pins: Particle index to world attachment point
    """
    positions: np.ndarray
    velocities: np.ndarray
    rest_length: float
    particle_mass: float
    radius: float
    pins: Dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def count(self) -> int:
        """Number of particles N."""
        return self.positions.shape[0]

    def copy(self) -> "RopeState":
        """Deep copy."""
        return RopeState(self.positions.copy(), self.velocities.copy(), self.rest_length,
                         self.particle_mass, self.radius,
                         {k: v.copy() for k, v in self.pins.items()})


@dataclass(eq=False)
class WorldState:
    """
    Complete simulator state.

    Attributes:
        rope: Strap particle chain
        bar_angle: Bar joint angle in [0, 2π)
        gripper: Gripper pose in world
        hook: Hook shape mounted on the bar
        material: Strap material
        slack: Extra strap length (m)
        scene: Scene layout
        sim: Solver settings
        bar_mode: Kinematic or passive bar
        bar_velocity: Bar angular velocity (rad/s), passive mode only
        gripper_attached: Whether particle 0 is pinned to the gripper
        step_index: Number of steps taken
        contact_torque: Rope contact torque on the bar during the last step (N·m)
    """
    rope: RopeState
    bar_angle: float
    gripper: Pose6
    hook: HookShape
    material: Material
    slack: float
    scene: SceneConfig
    sim: SimConfig
    bar_mode: BarMode = BarMode.KINEMATIC
    bar_velocity: float = 0.0
    gripper_attached: bool = True
    step_index: int = 0
    contact_torque: float = 0.0

    def __post_init__(self):
        if self.slack < 0:
            raise ValidationError("Slack must be >= 0", field="slack", value=self.slack)
        self.bar_angle = wrap_angle(self.bar_angle)

    @property
    def time(self) -> float:
        """Simulated time (s)."""
        return self.step_index * self.sim.dt

    def copy(self) -> "WorldState":
        """Deep copy; the copy shares no mutable state with the original."""
        return WorldState(self.rope.copy(), self.bar_angle, self.gripper, self.hook, self.material,
                          self.slack, self.scene, self.sim, self.bar_mode, self.bar_velocity,
                          self.gripper_attached, self.step_index, self.contact_torque)


@dataclass(frozen=True, eq=False)
class ActionPair:
    """
    Joint action of both agents for one step.

    Attributes:
        a_rob: End-effector delta (dx, dy, dz, drx, dry, drz); translation in
            world axes, rotation as intrinsic XYZ Euler in the gripper frame
        a_bar: Bar joint delta (rad)
    """
    a_rob: np.ndarray
    a_bar: float = 0.0

    def __post_init__(self):
        a_rob = np.asarray(self.a_rob, dtype=np.float64).reshape(6)
        a_rob.setflags(write=False)
        object.__setattr__(self, "a_rob", a_rob)
        object.__setattr__(self, "a_bar", float(self.a_bar))

    @classmethod
    def no_change(cls) -> "ActionPair":
        """Return the exact zero action of both agents."""
        return cls(np.zeros(6), 0.0)

    @classmethod
    def from_vector(cls, vector) -> "ActionPair":
        """Build from the 7-vector (a_rob, a_bar)."""
        vector = np.asarray(vector, dtype=np.float64).reshape(7)
        return cls(vector[:6], vector[6])

    def vector(self) -> np.ndarray:
        """Return the 7-vector (a_rob, a_bar)."""
        return np.concatenate([self.a_rob, [self.a_bar]])

    @property
    def translation(self) -> np.ndarray:
        return self.a_rob[:3]

    @property
    def rotation(self) -> np.ndarray:
        return self.a_rob[3:]

    def within_bounds(self) -> bool:
        """Check the per-step action bounds."""
        return bool(
            np.linalg.norm(self.translation) <= MAX_TRANSLATION + BOUND_TOLERANCE
            and np.all(np.abs(self.rotation) <= MAX_ROTATION + BOUND_TOLERANCE)
            and abs(self.a_bar) <= MAX_BAR + BOUND_TOLERANCE
        )

    def clipped(self) -> "ActionPair":
        """Return the action projected into the bounds."""
        return ActionPair.from_vector(clip_action_vectors(self.vector()[None, :])[0])


def clip_action_vectors(actions: np.ndarray) -> np.ndarray:
    """
    Project 7-vector actions into the per-step bounds.

    Translation is scaled down to norm 1 cm; rotations and the bar delta are
    clipped per component.

    Args:
        actions: Array of shape (K, 7)

    Returns:
        Clipped copy, shape (K, 7)
    """
    actions = np.array(actions, dtype=np.float64, copy=True)
    norms = np.linalg.norm(actions[:, :3], axis=1)
    scale = np.where(norms > MAX_TRANSLATION, MAX_TRANSLATION / np.maximum(norms, 1e-300), 1.0)
    actions[:, :3] *= scale[:, None]
    actions[:, 3:6] = np.clip(actions[:, 3:6], -MAX_ROTATION, MAX_ROTATION)
    actions[:, 6] = np.clip(actions[:, 6], -MAX_BAR, MAX_BAR)
    return actions


@dataclass(frozen=True, eq=False)
class KeypointObservation:
    """
    Planner observation: strap keypoints in both cameras plus the bar angle.

    Attributes:
        pixels: Keypoint pixels, shape (2, n, 2), camera order (bar, wrist),
            ascending particle index, (u, v) per point
        offscreen: Off-screen flags, shape (2, n); flagged points are clamped to the border
        bar_angle: Bar angle in [0, 2π)
        t: Step index
    """
    pixels: np.ndarray
    offscreen: np.ndarray
    bar_angle: float
    t: int = 0

    @property
    def count(self) -> int:
        """Keypoints per camera n."""
        return self.pixels.shape[1]

    def flat_keypoints(self) -> np.ndarray:
        """Return the 4n keypoint vector (bar camera first)."""
        return self.pixels.reshape(-1)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "t": int(self.t),
            "bar_angle": float(self.bar_angle),
            "pixels": self.pixels.tolist(),
            "offscreen": self.offscreen.astype(bool).tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "KeypointObservation":
        return cls(np.asarray(data["pixels"], dtype=np.float64),
                   np.asarray(data["offscreen"], dtype=bool),
                   float(data["bar_angle"]), int(data["t"]))


@dataclass(frozen=True)
class LinkingResult:
    """Discrete linking value and the vertex counts it was computed with."""
    value: float
    m1: int
    m2: int


@dataclass(frozen=True)
class CostBounds:
    """
    Normalization bounds of the linking cost.

    Attributes:
        beta0: Smallest training linking value
        beta1: Largest training linking value
    """
    beta0: float
    beta1: float

    def __post_init__(self):
        if not (np.isfinite(self.beta0) and np.isfinite(self.beta1) and self.beta0 < self.beta1):
            raise ValidationError("Cost bounds need beta0 < beta1", field="bounds",
                                  value=(self.beta0, self.beta1), constraint="beta0 < beta1")


@dataclass(eq=False)
class TurnRecord:
    """
    One planner turn.

    Attributes:
        turn: Turn index within the trial
        agent: Agent that planned the turn
        candidates: Sampled joint actions, shape (K, 7); the other agent's part is exactly zero
        costs: Predicted cost per candidate, shape (K,)
        chosen_index: Index of the executed candidate (-1 for an MPPI average)
        chosen: Executed action
        observation: Observation after execution
        clamped: Number of candidates whose linking cost was clamped
        wall_clock: Planning time (s)
    """
    turn: int
    agent: AgentId
    candidates: np.ndarray
    costs: np.ndarray
    chosen_index: int
    chosen: ActionPair
    observation: Optional[KeypointObservation] = None
    clamped: int = 0
    wall_clock: float = 0.0

    def to_dict(self, include_timing: bool = False) -> Dict[str, Any]:
        """Serialize; wall-clock only when requested so logs stay byte-reproducible."""
        data = {
            "turn": self.turn,
            "agent": str(self.agent),
            "candidates": self.candidates.tolist(),
            "costs": self.costs.tolist(),
            "chosen_index": self.chosen_index,
            "chosen": self.chosen.vector().tolist(),
            "observation": self.observation.to_dict() if self.observation else None,
            "clamped": self.clamped,
        }
        if include_timing:
            data["wall_clock"] = self.wall_clock
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TurnRecord":
        obs = data.get("observation")
        return cls(
            turn=int(data["turn"]),
            agent=AgentId(data["agent"]),
            candidates=np.asarray(data["candidates"], dtype=np.float64),
            costs=np.asarray(data["costs"], dtype=np.float64),
            chosen_index=int(data["chosen_index"]),
            chosen=ActionPair.from_vector(data["chosen"]),
            observation=KeypointObservation.from_dict(obs) if obs else None,
            clamped=int(data.get("clamped", 0)),
            wall_clock=float(data.get("wall_clock", 0.0)),
        )


@dataclass(eq=False)
class TrialResult:
    """
    Outcome of one closed-loop trial.

    Attributes:
        trial_id: Stable trial identifier
        method: Control method
        seed: Trial seed
        success: Whether the goal test passed
        turns_used: Planner turns executed
        diverged: Whether the simulator diverged
        goal_checks: (turn, passed) for every goal check
        records: Turn records
        bar_angles: Bar angle after every executed step
        error: Diagnostic message of a failed trial
    """
    trial_id: str
    method: Method
    seed: int
    success: bool = False
    turns_used: int = 0
    diverged: bool = False
    goal_checks: List[Tuple[int, bool]] = field(default_factory=list)
    records: List[TurnRecord] = field(default_factory=list)
    bar_angles: List[float] = field(default_factory=list)
    error: Optional[str] = None

    def summary(self) -> Dict[str, Any]:
        """Return the per-trial summary written as the last line of a trial log."""
        return {
            "trial_id": self.trial_id,
            "method": str(self.method),
            "seed": self.seed,
            "success": self.success,
            "turns_used": self.turns_used,
            "diverged": self.diverged,
            "goal_checks": [[t, ok] for t, ok in self.goal_checks],
            "error": self.error,
        }
