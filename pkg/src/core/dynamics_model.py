"""
Learned keypoint dynamics.

Exploration episodes are generated in the simulator and stored as a
transition dataset; a dense network learns the next keypoints from the
flattened history features plus the joint action. The bar angle is never
learned: it follows the exact kinematic update.

Dataset file layout (npz via utils.persistence, header format
``strap-dataset``):

    features        (S, H*(4n+8))  history features before the action
    actions         (S, 7)         executed action
    current         (S, 4n)        keypoints of the newest history entry
    targets         (S, 4n)        keypoints after the action
    bar_angles      (S,)           bar angle before the action, [0, 2pi)
    positions       (S, N, 3)      strap particles before the action
    episode, step   (S,)           episode index and step within it
    split           (S,)           0 train, 1 val, 2 test (assigned per episode)
    labels          (S,)           exact linking values (labeled datasets only)
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..models import ActionPair, KeypointObservation, wrap_angle
from ..models.enums import Activation, SplitTag
from ..utils.config import DynamicsHyper, HarnessConfig, config_hash
from ..utils.exceptions import CheckpointError, DatasetError, SimulationDivergedError, ValidationError
from ..utils.logging import create_operation_context, get_operation_logger
from ..utils.persistence import build_provenance, load_npz, save_npz
from ..utils.validators import require_int_at_least
from . import keypoints, nnet, rope_sim
from .exploration import ExplorationPolicy, outside_workspace

DATASET_FORMAT = "strap-dataset"
DYNAMICS_KIND = "dynamics"

_log = get_operation_logger(__name__)


@dataclass
class TransitionDataset:
    """
    One-step transitions with per-episode split tags.

    ``header`` carries provenance plus hook, material, slack, n and H.
    """
    features: np.ndarray
    actions: np.ndarray
    current: np.ndarray
    targets: np.ndarray
    bar_angles: np.ndarray
    positions: np.ndarray
    episode: np.ndarray
    step: np.ndarray
    split: np.ndarray
    header: Dict[str, Any] = field(default_factory=dict)
    labels: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def keypoint_count(self) -> int:
        return int(self.header["keypoints"])

    @property
    def history_length(self) -> int:
        return int(self.header["history"])

    def mask(self, split: SplitTag) -> np.ndarray:
        return self.split == split.code

    def subset(self, mask: np.ndarray) -> "TransitionDataset":
        """Rows selected by a boolean mask or index array."""
        return replace(
            self,
            features=self.features[mask], actions=self.actions[mask], current=self.current[mask],
            targets=self.targets[mask], bar_angles=self.bar_angles[mask], positions=self.positions[mask],
            episode=self.episode[mask], step=self.step[mask], split=self.split[mask],
            labels=None if self.labels is None else self.labels[mask],
        )

    def select(self, split: SplitTag) -> "TransitionDataset":
        return self.subset(self.mask(split))


def _empty_dataset(cfg: HarnessConfig, header: Dict[str, Any]) -> TransitionDataset:
    n, h = cfg.keypoints.count, cfg.keypoints.history
    return TransitionDataset(
        features=np.zeros((0, keypoints.feature_width(n, h))), actions=np.zeros((0, 7)),
        current=np.zeros((0, 4 * n)), targets=np.zeros((0, 4 * n)), bar_angles=np.zeros(0),
        positions=np.zeros((0, cfg.scene.rope_particles, 3)), episode=np.zeros(0, dtype=np.int64),
        step=np.zeros(0, dtype=np.int64), split=np.zeros(0, dtype=np.int64), header=header)


def split_episodes(episodes: int, val_fraction: float, test_fraction: float, seed: int) -> np.ndarray:
    """
    Split code per episode from a seeded permutation.

    With at least three episodes val and test each get at least one.
    """
    codes = np.full(episodes, SplitTag.TRAIN.code, dtype=np.int64)
    if episodes < 3:
        return codes
    n_val = max(1, int(round(episodes * val_fraction)))
    n_test = max(1, int(round(episodes * test_fraction)))
    order = np.random.default_rng(seed).permutation(episodes)
    codes[order[:n_val]] = SplitTag.VAL.code
    codes[order[n_val:n_val + n_test]] = SplitTag.TEST.code
    return codes


def run_episode(cfg: HarnessConfig, index: int, seed_seq: np.random.SeedSequence,
                steps: int) -> Optional[Dict[str, np.ndarray]]:
    """
    One exploration episode; None when the simulator diverged.

    The episode ends early when the gripper leaves the workspace cube.
    """
    data = cfg.data
    rng = np.random.default_rng(seed_seq)
    count, capacity = cfg.keypoints.count, cfg.keypoints.history
    cameras = keypoints.make_cameras(cfg)
    rows: Dict[str, List[np.ndarray]] = {k: [] for k in
                                         ("features", "actions", "current", "targets", "bar_angles",
                                          "positions", "step")}
    try:
        world = rope_sim.initial_world(cfg, data.hook, data.material, data.slack, rng=rng)
        world, _ = rope_sim.settle(world, data.settle_steps, min_steps=data.settle_steps)
        world.step_index = 0
        obs = keypoints.extract(world, cameras, count)
        history = keypoints.History(capacity).push(obs)
        policy = ExplorationPolicy(rng, data.approach_fraction)
        for k in range(steps):
            action = policy.action(world)
            nxt = rope_sim.step(world, action)
            nxt_obs = keypoints.extract(nxt, cameras, count)
            rows["features"].append(history.features())
            rows["actions"].append(action.vector())
            rows["current"].append(obs.flat_keypoints())
            rows["targets"].append(nxt_obs.flat_keypoints())
            rows["bar_angles"].append(world.bar_angle)
            rows["positions"].append(world.rope.positions.copy())
            rows["step"].append(k)
            history.push(nxt_obs, action)
            world, obs = nxt, nxt_obs
            if outside_workspace(world):
                break
    except SimulationDivergedError as e:
        _log.warning(f"Episode {index} diverged and is skipped: {e}")
        return None
    if not rows["step"]:
        return None
    out = {k: np.asarray(v) for k, v in rows.items()}
    out["episode"] = np.full(out["step"].shape[0], index, dtype=np.int64)
    return out


def generate_data(cfg: HarnessConfig, seed: int, episodes: Optional[int] = None,
                  steps: Optional[int] = None, workers: int = 1) -> TransitionDataset:
    """
    Generate exploration transitions.

    Every episode draws from its own child of ``SeedSequence(seed)``, so the
    result does not depend on ``workers``.
    """
    episodes = cfg.data.episodes if episodes is None else episodes
    steps = cfg.data.steps if steps is None else steps
    require_int_at_least(episodes, 0, "episodes")
    header = {
        "format": DATASET_FORMAT,
        "provenance": build_provenance(config_hash(cfg), seed),
        "hook": cfg.data.hook, "material": cfg.data.material, "slack": cfg.data.slack,
        "keypoints": cfg.keypoints.count, "history": cfg.keypoints.history,
        "episodes": episodes, "steps": steps,
    }
    if episodes == 0:
        return _empty_dataset(cfg, header)

    op = create_operation_context("gen_data", f"seed{seed}")
    _log.start_operation(op, "Generating exploration data", episodes=episodes, steps=steps, workers=workers)
    seeds = np.random.SeedSequence(seed).spawn(episodes)
    splits = split_episodes(episodes, cfg.data.val_fraction, cfg.data.test_fraction, seed)
    results: List[Optional[Dict[str, np.ndarray]]] = []
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_episode, cfg, i, seeds[i], steps) for i in range(episodes)]
            for i, future in enumerate(futures):
                results.append(future.result())
                _log.log_batch_progress(i + 1, episodes, every=10)
    else:
        for i in range(episodes):
            results.append(run_episode(cfg, i, seeds[i], steps))
            _log.log_batch_progress(i + 1, episodes, every=10)

    kept = [r for r in results if r is not None]
    header["skipped_episodes"] = [i for i, r in enumerate(results) if r is None]
    if not kept:
        _log.end_operation(True, "no episodes survived", skipped=len(header["skipped_episodes"]))
        return _empty_dataset(cfg, header)
    merged = {k: np.concatenate([r[k] for r in kept]) for k in kept[0]}
    dataset = TransitionDataset(
        features=merged["features"], actions=merged["actions"], current=merged["current"],
        targets=merged["targets"], bar_angles=merged["bar_angles"], positions=merged["positions"],
        episode=merged["episode"], step=merged["step"], split=splits[merged["episode"]], header=header)
    _log.end_operation(True, f"{len(dataset)} transitions", skipped=len(header["skipped_episodes"]))
    return dataset


_ARRAY_FIELDS = ("features", "actions", "current", "targets", "bar_angles", "positions", "episode",
                 "step", "split")


def save_dataset(path: Path, dataset: TransitionDataset) -> Path:
    """Write a dataset file (layout in the module docstring)."""
    arrays = {name: getattr(dataset, name) for name in _ARRAY_FIELDS}
    if dataset.labels is not None:
        arrays["labels"] = dataset.labels
    save_npz(path, {**dataset.header, "format": DATASET_FORMAT}, arrays)
    _log.log_artifact("save", Path(path), samples=len(dataset))
    return Path(path)


def load_dataset(path: Path) -> TransitionDataset:
    """
    Read a dataset file.

    Raises:
        DatasetError: If the file is not a dataset or lacks arrays
    """
    try:
        header, arrays = load_npz(path, expected_format=DATASET_FORMAT)
    except CheckpointError as e:
        raise DatasetError(e.message, path=Path(path), reason=e.reason, details=e.details)
    missing = [name for name in _ARRAY_FIELDS if name not in arrays]
    if missing:
        raise DatasetError("Dataset is missing arrays", path=Path(path), reason="malformed",
                           details=", ".join(missing))
    _log.log_artifact("load", Path(path), samples=arrays["features"].shape[0])
    return TransitionDataset(header=header, labels=arrays.get("labels"),
                             **{name: arrays[name] for name in _ARRAY_FIELDS})


@dataclass
class DynamicsModel:
    """
    Keypoint dynamics network with its normalization.

    Attributes:
        network: Dense network, input H*(4n+8) + 7, output 4n
        input_norm: Normalization of network inputs
        output_norm: Normalization of network outputs
        keypoint_count: n
        history_length: H
        predict_delta: Whether the network outputs the keypoint change
        image_sizes: (width, height) per camera, for clamping predictions
        header: Provenance plus the hook and material the model was trained on
    """
    network: nnet.Mlp
    input_norm: nnet.Normalizer
    output_norm: nnet.Normalizer
    keypoint_count: int
    history_length: int
    predict_delta: bool = True
    image_sizes: Tuple[Tuple[int, int], ...] = ((640, 480), (640, 480))
    header: Dict[str, Any] = field(default_factory=dict)

    def _clamp(self, flat: np.ndarray) -> np.ndarray:
        flat = np.array(flat, copy=True)
        per = 2 * self.keypoint_count
        for c, (width, height) in enumerate(self.image_sizes):
            block = flat[..., c * per:(c + 1) * per]
            block[..., 0::2] = np.clip(block[..., 0::2], 0.0, width)
            block[..., 1::2] = np.clip(block[..., 1::2], 0.0, height)
        return flat


def predict_batch(model: DynamicsModel, features: np.ndarray, actions: np.ndarray,
                  current: np.ndarray, bar_angles: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    One-step prediction for many histories.

    Args:
        features: History features, shape (K, H*(4n+8))
        actions: Joint actions, shape (K, 7)
        current: Newest keypoints of each history, shape (K, 4n)
        bar_angles: Current bar angles, shape (K,)

    Returns:
        (next keypoints (K, 4n), next bar angles (K,) in [0, 2pi))
    """
    x = model.input_norm.apply(np.concatenate([features, actions], axis=1))
    out = model.output_norm.invert(model.network.forward(x))
    if model.predict_delta:
        out = out + current
    bars = np.array([wrap_angle(b + a) for b, a in zip(bar_angles, actions[:, 6])])
    return model._clamp(out), bars


def predict(model: DynamicsModel, history: keypoints.History, a_rob, a_bar: float) -> KeypointObservation:
    """
    Predicted next observation after the joint action.

    The bar angle is ``wrap(o_bar + a_bar)``, never a network output.
    """
    latest = history.latest
    action = ActionPair(a_rob, a_bar)
    kp, bars = predict_batch(model, history.features()[None, :], action.vector()[None, :],
                             latest.flat_keypoints()[None, :], np.array([latest.bar_angle]))
    pixels = kp[0].reshape(len(model.image_sizes), model.keypoint_count, 2)
    sizes = np.array(model.image_sizes, dtype=np.float64)
    offscreen = ((pixels <= 0.0) | (pixels >= sizes[:, None, :])).any(axis=2)
    return KeypointObservation(pixels, offscreen, bars[0], latest.t + 1)


def _training_arrays(dataset: TransitionDataset, predict_delta: bool) -> Tuple[np.ndarray, np.ndarray]:
    x = np.concatenate([dataset.features, dataset.actions], axis=1)
    y = dataset.targets - dataset.current if predict_delta else dataset.targets
    return x, y


def train_dynamics(dataset: TransitionDataset, hyper: DynamicsHyper,
                   provenance: Optional[Dict[str, Any]] = None,
                   image_sizes: Tuple[Tuple[int, int], ...] = ((640, 480), (640, 480))
                   ) -> Tuple[DynamicsModel, Dict[str, Any]]:
    """
    Train the dynamics network on the train split with early stopping on val.

    ``hyper.batch_size <= 0`` trains full-batch.

    Returns:
        (model, report) where the report holds loss curves and split metrics

    Raises:
        ValidationError: If the train split is empty
        TrainingDivergedError: On a non-finite loss
    """
    train_set = dataset.select(SplitTag.TRAIN)
    if len(train_set) == 0:
        raise ValidationError("Dynamics training needs a non-empty train split", field="dataset")
    val_set = dataset.select(SplitTag.VAL)
    n, h = dataset.keypoint_count, dataset.history_length
    x, y = _training_arrays(train_set, hyper.predict_delta)
    input_norm, output_norm = nnet.Normalizer.fit(x), nnet.Normalizer.fit(y)
    spec = nnet.MlpSpec.uniform(x.shape[1], y.shape[1], hyper.hidden_width, hyper.layers,
                                Activation(hyper.activation))
    network = nnet.Mlp.init(spec, hyper.seed)
    validation = None
    if len(val_set) > 0:
        vx, vy = _training_arrays(val_set, hyper.predict_delta)
        validation = (input_norm.apply(vx), output_norm.apply(vy))

    op = create_operation_context("train_dynamics")
    _log.start_operation(op, "Training dynamics model", samples=len(train_set), epochs=hyper.epochs)

    def progress(epoch, train_loss, val_loss):
        if (epoch + 1) % 10 == 0 or epoch == 0:
            shown = "-" if val_loss is None else f"{val_loss:.3e}"
            _log.debug(f"epoch {epoch + 1}: train {train_loss:.3e} val {shown}")

    curves = nnet.train(network, input_norm.apply(x), output_norm.apply(y), epochs=hyper.epochs,
                        learning_rate=hyper.learning_rate,
                        batch_size=hyper.batch_size if hyper.batch_size > 0 else None, seed=hyper.seed,
                        validation=validation, patience=hyper.patience, on_epoch=progress)
    header = {"provenance": provenance or dataset.header.get("provenance", {}),
              "hook": dataset.header.get("hook"), "material": dataset.header.get("material")}
    model = DynamicsModel(network, input_norm, output_norm, n, h, hyper.predict_delta,
                          tuple(tuple(s) for s in image_sizes), header)
    report = {"training": curves.to_dict()}
    for tag in (SplitTag.TRAIN, SplitTag.VAL, SplitTag.TEST):
        subset = dataset.select(tag)
        if len(subset) > 0:
            report[str(tag)] = evaluate_dynamics(model, subset)
    _log.end_operation(True, f"best epoch {curves.best_epoch}", epochs=curves.epochs_run)
    return model, report


def _keypoint_errors(predicted: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Mean keypoint pixel distance per sample."""
    diff = (predicted - target).reshape(predicted.shape[0], -1, 2)
    return np.linalg.norm(diff, axis=2).mean(axis=1)


def evaluate_dynamics(model: DynamicsModel, dataset: TransitionDataset,
                      split: Optional[SplitTag] = None) -> Dict[str, float]:
    """
    One-step metrics against the persistence (no-motion) predictor.

    Returns:
        samples, mse (px²), normalized_mse, median_error (px, mean keypoint
        distance per sample), persistence_median (px)
    """
    data = dataset if split is None else dataset.select(split)
    if len(data) == 0:
        return {"samples": 0}
    predicted, _ = predict_batch(model, data.features, data.actions, data.current, data.bar_angles)
    x, y = _training_arrays(data, model.predict_delta)
    normalized = nnet.mse(model.network.forward(model.input_norm.apply(x)), model.output_norm.apply(y))
    return {
        "samples": int(len(data)),
        "mse": nnet.mse(predicted, data.targets),
        "normalized_mse": normalized,
        "median_error": float(np.median(_keypoint_errors(predicted, data.targets))),
        "persistence_median": float(np.median(_keypoint_errors(data.current, data.targets))),
    }


def multistep_error(model: DynamicsModel, dataset: TransitionDataset, horizon: int,
                    split: Optional[SplitTag] = SplitTag.TEST) -> List[float]:
    """
    Open-loop rollout error: median keypoint error after 1..horizon predicted steps.

    Rollouts start every ``horizon`` steps inside each episode and replay the
    recorded actions; predictions feed back into the history features.
    """
    data = dataset if split is None else dataset.select(split)
    n = model.keypoint_count
    errors: List[List[float]] = [[] for _ in range(horizon)]
    for ep in np.unique(data.episode):
        rows = np.nonzero(data.episode == ep)[0]
        rows = rows[np.argsort(data.step[rows])]
        for start in range(0, rows.size - horizon + 1, horizon):
            idx = rows[start:start + horizon]
            feats = data.features[idx[:1]]
            current = data.current[idx[:1]]
            bar = data.bar_angles[idx[:1]]
            for j, row in enumerate(idx):
                action = data.actions[row][None, :]
                kp, bar = predict_batch(model, feats, action, current, bar)
                errors[j].append(float(_keypoint_errors(kp, data.targets[row][None, :])[0]))
                feats = keypoints.roll_features(feats, keypoints.entry_features(kp, bar, action))
                current = kp
    return [float(np.median(e)) if e else float("nan") for e in errors]


def save_dynamics(path: Path, model: DynamicsModel, provenance: Dict[str, Any]) -> Path:
    """Checkpoint a dynamics model (nnet checkpoint, ``extra.model = dynamics``)."""
    extra = {"model": DYNAMICS_KIND, "keypoints": model.keypoint_count, "history": model.history_length,
             "predict_delta": model.predict_delta, "image_sizes": [list(s) for s in model.image_sizes],
             "hook": model.header.get("hook"), "material": model.header.get("material")}
    nnet.save_checkpoint(path, model.network, {"input": model.input_norm, "output": model.output_norm},
                         provenance, extra)
    _log.log_artifact("save", Path(path), model=DYNAMICS_KIND)
    return Path(path)


def load_dynamics(path: Path) -> DynamicsModel:
    """
    Load a dynamics checkpoint.

    Raises:
        CheckpointError: If missing, malformed or not a dynamics checkpoint
    """
    network, norms, header = nnet.load_checkpoint(path)
    extra = header.get("extra", {})
    if extra.get("model") != DYNAMICS_KIND or not isinstance(network, nnet.Mlp):
        raise CheckpointError("Not a dynamics checkpoint", path=Path(path), reason="format",
                              details=f"found {extra.get('model')!r}")
    return DynamicsModel(network, norms["input"], norms["output"], int(extra["keypoints"]),
                         int(extra["history"]), bool(extra["predict_delta"]),
                         tuple(tuple(s) for s in extra["image_sizes"]),
                         {"provenance": header.get("provenance", {}), "hook": extra.get("hook"),
                          "material": extra.get("material")})
