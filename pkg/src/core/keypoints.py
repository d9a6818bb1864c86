"""
Planner observations: strap keypoints in the two virtual cameras.

Keypoints are exact projections of fixed strap particles (uniformly spaced
indices). A History keeps the last H (observation, action) entries; each
entry pairs an observation with the action whose execution produced it, so
the control loop pushes after every executed step.

Feature layout of one entry (width 4n + 8):

    [0, 2n)        bar camera pixels (u0, v0, u1, v1, ...) in particle order
    [2n, 4n)       wrist camera pixels, same order
    4n             bar angle wrapped to (-pi, pi]
    4n+1 .. 4n+7   action (dx, dy, dz, drx, dry, drz, dbar)

History features concatenate the H entries oldest first. While fewer than
H entries exist the front is padded with copies of the earliest real
observation and zero actions.
"""

from collections import deque
from typing import Any, Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..models import ActionPair, Camera, KeypointObservation, WorldState, wrap_signed
from ..utils.config import HarnessConfig
from ..utils.exceptions import ValidationError
from . import geometry

ACTION_WIDTH = 7


def entry_width(count: int) -> int:
    """Feature width of one history entry."""
    return 4 * count + 1 + ACTION_WIDTH


def feature_width(count: int, history: int) -> int:
    """Width of the flattened history features."""
    return history * entry_width(count)


def keypoint_indices(particles: int, count: int) -> np.ndarray:
    """Particle indices used as keypoint sources, uniform along the chain, ascending."""
    if count < 1 or count > particles:
        raise ValidationError("Keypoint count must lie in [1, particles]", field="keypoints.count",
                              value=count, constraint=f"in [1, {particles}]")
    return np.round(np.linspace(0, particles - 1, count)).astype(int)


def make_cameras(cfg: HarnessConfig) -> Tuple[Camera, ...]:
    """Cameras in observation order (bar, wrist)."""
    return tuple(geometry.make_camera(c) for c in cfg.cameras)


def extract(world: WorldState, cameras: Sequence[Camera], count: int = 8) -> KeypointObservation:
    """
    Project the keypoint particles through every camera.

    Points behind a camera or outside its image are flagged off-screen and
    clamped to the image border.
    """
    points = world.rope.positions[keypoint_indices(world.rope.count, count)]
    pixels = np.empty((len(cameras), count, 2))
    offscreen = np.empty((len(cameras), count), dtype=bool)
    for c, camera in enumerate(cameras):
        uv, in_front = geometry.project_many(camera, points)
        inside = ((uv[:, 0] >= 0.0) & (uv[:, 0] <= camera.width)
                  & (uv[:, 1] >= 0.0) & (uv[:, 1] <= camera.height))
        offscreen[c] = ~(in_front & inside)
        pixels[c, :, 0] = np.clip(uv[:, 0], 0.0, camera.width)
        pixels[c, :, 1] = np.clip(uv[:, 1], 0.0, camera.height)
    return KeypointObservation(pixels, offscreen, world.bar_angle, world.step_index)


def entry_features(keypoints: np.ndarray, bar_angles: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Build entry feature rows from (K, 4n) keypoints, (K,) bar angles and (K, 7) actions."""
    keypoints = np.atleast_2d(keypoints)
    bar = np.atleast_1d(wrap_signed(np.asarray(bar_angles, dtype=np.float64)))
    return np.concatenate([keypoints, bar[:, None], np.atleast_2d(actions)], axis=1)


def roll_features(features: np.ndarray, entries: np.ndarray) -> np.ndarray:
    """Drop the oldest entry of (K, H*w) features and append (K, w) new entries."""
    width = entries.shape[1]
    return np.concatenate([features[:, width:], entries], axis=1)


def latest_entry(features: np.ndarray, count: int) -> np.ndarray:
    """The newest entry of (K, H*w) features, shape (K, w)."""
    return features[:, -entry_width(count):]


class History:
    """
    Ring buffer of the last ``capacity`` (observation, action) entries.

    Attributes:
        capacity: H
    """

    def __init__(self, capacity: int = 20, entries: Optional[Sequence[Tuple[KeypointObservation, ActionPair]]] = None):
        if capacity < 1:
            raise ValidationError("History capacity must be >= 1", field="history", value=capacity)
        self.capacity = capacity
        self._entries: Deque[Tuple[KeypointObservation, ActionPair]] = deque(maxlen=capacity)
        for obs, action in entries or ():
            self._entries.append((obs, action))

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> List[Tuple[KeypointObservation, ActionPair]]:
        """Real entries, oldest first."""
        return list(self._entries)

    @property
    def padded(self) -> int:
        """Number of padding slots in the feature view."""
        return self.capacity - len(self._entries)

    def padding_flags(self) -> np.ndarray:
        """Per-slot flags of the feature view, True for padding (slots are oldest first)."""
        return np.arange(self.capacity) < self.padded

    @property
    def latest(self) -> KeypointObservation:
        if not self._entries:
            raise ValidationError("History is empty", field="history")
        return self._entries[-1][0]

    def push(self, obs: KeypointObservation, action: Optional[ActionPair] = None) -> "History":
        """Append an entry, evicting the oldest beyond capacity; returns self."""
        self._entries.append((obs, action if action is not None else ActionPair.no_change()))
        return self

    def copy(self) -> "History":
        return History(self.capacity, self.entries)

    def entry_matrix(self) -> np.ndarray:
        """Feature rows (H, 4n + 8) with padding applied."""
        if not self._entries:
            raise ValidationError("Cannot build features from an empty history", field="history")
        first = self._entries[0][0]
        rows = [(first, ActionPair.no_change())] * self.padded + list(self._entries)
        keypoints = np.stack([obs.flat_keypoints() for obs, _ in rows])
        bars = np.array([obs.bar_angle for obs, _ in rows])
        actions = np.stack([a.vector() for _, a in rows])
        return entry_features(keypoints, bars, actions)

    def features(self) -> np.ndarray:
        """Flattened features, width H × (4n + 8)."""
        return self.entry_matrix().reshape(-1)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "capacity": self.capacity,
            "entries": [{"observation": obs.to_dict(), "action": a.vector().tolist()} for obs, a in self._entries],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "History":
        entries = [(KeypointObservation.from_dict(e["observation"]), ActionPair.from_vector(e["action"]))
                   for e in data["entries"]]
        return cls(int(data["capacity"]), entries)
