"""
Test fixtures for the strap-tying stack.

Builders for a small, fast configuration, closed test curves, keypoint
observations, synthetic transition datasets and untrained planner models.
Nothing here touches the filesystem; tests pass ``tmp_path`` where files
are needed.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from src.core import keypoints, nnet
from src.core.amortizer import AmortizerModel
from src.core.dynamics_model import DynamicsModel, TransitionDataset
from src.core.mpc import PlannerModels
from src.models import ActionPair, CostBounds, KeypointObservation, Polyline3, Pose6
from src.models.enums import SplitTag
from src.utils.config import HarnessConfig, config_from_dict

KEYPOINTS = 4
HISTORY = 3
PARTICLES = 12

TINY_SETTINGS = {
    "scene": {"rope_particles": PARTICLES},
    "keypoints": {"count": KEYPOINTS, "history": HISTORY},
    "data": {"episodes": 3, "steps": 4, "settle_steps": 2},
    "dynamics": {"hidden_width": 8, "layers": 2, "epochs": 3, "batch_size": 0, "patience": 2},
    "amortizer": {"hidden_width": 4, "epochs": 3, "batch_size": 0, "patience": 2},
    "planner": {"candidates": 8, "rollout_depth": 1, "horizon": 4, "goal_check_period": 2},
    "goal": {"window_seconds": 0.1},
    "grid": {"hooks": ["H1"], "materials": ["M1"], "slack_levels": [0.0], "trials": 1},
}


def tiny_config(**sections) -> HarnessConfig:
    """
    Small config for fast tests.

    Keyword arguments are extra sections layered on top, e.g.
    ``tiny_config(planner={"horizon": 0})``.
    """
    settings = {name: dict(values) for name, values in TINY_SETTINGS.items()}
    for name, values in sections.items():
        settings.setdefault(name, {}).update(values)
    return config_from_dict(settings)


# ---------------------------------------------------------------------------
# Curves
# ---------------------------------------------------------------------------

def circle(count: int = 64, radius: float = 1.0, center=(0.0, 0.0, 0.0), plane: str = "xy") -> Polyline3:
    """Closed counterclockwise circle in the xy plane, or the xz plane."""
    angles = np.linspace(0.0, 2.0 * np.pi, count, endpoint=False)
    c, s = radius * np.cos(angles), radius * np.sin(angles)
    zeros = np.zeros(count)
    points = np.column_stack([c, s, zeros]) if plane == "xy" else np.column_stack([c, zeros, s])
    return Polyline3(points + np.asarray(center, dtype=np.float64), closed=True)


def hopf_pair(count: int = 64) -> Tuple[Polyline3, Polyline3]:
    """Two unit circles linked once (linking number -1 with these orientations)."""
    return circle(count), circle(count, center=(1.0, 0.0, 0.0), plane="xz")


def unlinked_pair(count: int = 64) -> Tuple[Polyline3, Polyline3]:
    """Two unit circles far apart."""
    return circle(count), circle(count, center=(5.0, 0.0, 0.0), plane="xz")


def wavy_pair(seed: int, count: int = 256, linked: bool = True) -> Tuple[Polyline3, Polyline3]:
    """
    Seeded smooth closed pair: two unit circles with low-harmonic wobble.

    ``linked`` places them as in :func:`hopf_pair` (curves stay >= 0.6 apart),
    otherwise 3 m apart. Both are then moved by a random rigid pose and each
    is reversed with probability one half.
    """
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 2.0 * np.pi, count, endpoint=False)

    def wobble():
        k, m = rng.integers(1, 4, size=2)
        radius = 1.0 + 0.08 * np.sin(k * t + rng.uniform(0.0, 2.0 * np.pi))
        lift = 0.08 * np.cos(m * t + rng.uniform(0.0, 2.0 * np.pi))
        return radius, lift

    r, lift = wobble()
    a = np.column_stack([r * np.cos(t), r * np.sin(t), lift])
    r, lift = wobble()
    offset = 1.0 if linked else 3.0
    b = np.column_stack([offset + r * np.cos(t), lift, r * np.sin(t)])
    pose = Pose6(rng.normal(0.0, 1.0, 3), Rotation.from_rotvec(rng.normal(0.0, 1.5, 3)))
    curves = [Polyline3(pose.apply(points), closed=True) for points in (a, b)]
    return tuple(c.reversed() if rng.random() < 0.5 else c for c in curves)


# ---------------------------------------------------------------------------
# Observations and histories
# ---------------------------------------------------------------------------

def observation(t: int = 0, bar_angle: float = 0.0, count: int = KEYPOINTS,
                seed: Optional[int] = None) -> KeypointObservation:
    """Keypoint observation with pixels derived from ``t`` (or random with ``seed``)."""
    if seed is None:
        pixels = np.full((2, count, 2), 100.0 + t) + np.arange(count)[None, :, None]
    else:
        pixels = np.random.default_rng(seed).uniform(0.0, 400.0, (2, count, 2))
    return KeypointObservation(pixels, np.zeros((2, count), dtype=bool), bar_angle, t)


def history(length: int, capacity: int = HISTORY, count: int = KEYPOINTS) -> keypoints.History:
    """History of ``length`` entries, actions derived from the step index."""
    hist = keypoints.History(capacity)
    hist.push(observation(0, count=count))
    for t in range(1, length):
        action = ActionPair(np.full(6, 0.001 * t), 0.01)
        hist.push(observation(t, bar_angle=0.01 * t, count=count), action)
    return hist


# ---------------------------------------------------------------------------
# Datasets and models
# ---------------------------------------------------------------------------

def synthetic_dataset(episodes: int = 6, steps: int = 5, count: int = KEYPOINTS, capacity: int = HISTORY,
                      particles: int = PARTICLES, seed: int = 0, labeled: bool = False) -> TransitionDataset:
    """
    Random transitions with episodes split train, val, test round-robin.

    Labels, when requested, are a smooth function of the features so a
    model can fit them.
    """
    rng = np.random.default_rng(seed)
    rows = episodes * steps
    width = keypoints.feature_width(count, capacity)
    features = rng.uniform(0.0, 1.0, (rows, width))
    current = rng.uniform(100.0, 300.0, (rows, 4 * count))
    actions = rng.uniform(-0.005, 0.005, (rows, 7))
    episode = np.repeat(np.arange(episodes), steps)
    codes = (SplitTag.TRAIN.code, SplitTag.VAL.code, SplitTag.TEST.code)
    split = np.array([codes[e % 3] for e in episode], dtype=np.int64)
    dataset = TransitionDataset(
        features=features, actions=actions, current=current,
        targets=current + rng.normal(0.0, 1.0, current.shape),
        bar_angles=rng.uniform(0.0, 2.0 * np.pi, rows),
        positions=rng.uniform(-0.1, 0.1, (rows, particles, 3)),
        episode=episode, step=np.tile(np.arange(steps), episodes), split=split,
        header={"keypoints": count, "history": capacity, "hook": "H1", "material": "M1"})
    if labeled:
        dataset.labels = np.tanh(features[:, :4].sum(axis=1) - 2.0)
    return dataset


@dataclass
class SyntheticModels:
    """Untrained planner models with fixed, well-scaled normalization."""
    count: int = KEYPOINTS
    capacity: int = HISTORY
    hidden: int = 8
    seed: int = 0
    bounds: Tuple[float, float] = (-0.5, 1.0)
    image_sizes: Tuple[Tuple[int, int], ...] = field(default_factory=lambda: ((640, 480), (640, 480)))

    def dynamics(self) -> DynamicsModel:
        width = keypoints.feature_width(self.count, self.capacity) + keypoints.ACTION_WIDTH
        spec = nnet.MlpSpec.uniform(width, 4 * self.count, self.hidden, 2)
        return DynamicsModel(nnet.Mlp.init(spec, self.seed),
                             nnet.Normalizer(np.zeros(width), np.full(width, 100.0)),
                             nnet.Normalizer.identity(4 * self.count),
                             self.count, self.capacity, True, self.image_sizes)

    def amortizer(self) -> AmortizerModel:
        width = keypoints.entry_width(self.count)
        network = nnet.Gru.init(nnet.RecurrentSpec(width, self.hidden, 1, self.capacity), self.seed)
        return AmortizerModel(network, nnet.Normalizer(np.zeros(width), np.full(width, 100.0)),
                              nnet.Normalizer.identity(1), CostBounds(*self.bounds),
                              self.count, self.capacity)

    def planner(self) -> PlannerModels:
        return PlannerModels(self.dynamics(), self.amortizer())


def synthetic_models(**kwargs) -> PlannerModels:
    """Planner models built from :class:`SyntheticModels`."""
    return SyntheticModels(**kwargs).planner()


class RecordingScorer:
    """
    Planner scorer stub: costs are a fixed function of the candidates.

    By default the cost is the distance from ``target``, so the selected
    candidate is the one nearest to it. Every call is recorded.
    """

    def __init__(self, target: Optional[Sequence[float]] = None, clamped: int = 0):
        self.target = np.zeros(7) if target is None else np.asarray(target, dtype=np.float64)
        self.clamped = clamped
        self.calls: List[Tuple[np.ndarray, int]] = []

    def __call__(self, candidates, hist, models, cfg):
        self.calls.append((candidates.copy(), len(hist)))
        return np.linalg.norm(candidates - self.target, axis=1), self.clamped
