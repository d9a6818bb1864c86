"""
Learned linking cost.

Every dataset frame is labeled with the exact linking value of its strap
state; a GRU over the history entries learns to reproduce it. The cost
normalizes the network's estimate with the smallest and largest training
labels and clamps it to [0, 1].
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from ..models import CostBounds
from ..models.enums import SplitTag
from ..utils.config import AmortizerHyper, HarnessConfig
from ..utils.exceptions import CheckpointError, SingularConfigurationError, ValidationError
from ..utils.logging import create_operation_context, get_operation_logger
from . import geometry, keypoints, linking, nnet, rope_sim
from .dynamics_model import TransitionDataset

AMORTIZER_KIND = "amortizer"

_log = get_operation_logger(__name__)


def label_dataset(dataset: TransitionDataset, cfg: HarnessConfig, seed: int = 0) -> TransitionDataset:
    """
    Label every frame with the exact linking value of its strap state.

    Singular frames are retried with jitter; frames that stay singular are
    dropped and logged.

    Returns:
        New dataset with ``labels`` set
    """
    shape = rope_sim.make_hook_shape(cfg, dataset.header.get("hook", "H1"))
    drop = cfg.scene.closure_drop
    labels = np.zeros(len(dataset))
    keep = np.ones(len(dataset), dtype=bool)
    op = create_operation_context("label")
    _log.start_operation(op, "Labeling frames with exact linking", samples=len(dataset))
    for i in range(len(dataset)):
        strap = linking.strap_curve(dataset.positions[i], drop)
        hook = geometry.make_hook(shape, dataset.bar_angles[i])
        try:
            labels[i] = linking.link_with_jitter(strap, hook, seed=seed + i).value
        except SingularConfigurationError as e:
            keep[i] = False
            _log.warning(f"Dropping frame {i} (episode {dataset.episode[i]}, step {dataset.step[i]}): {e}")
        _log.log_batch_progress(i + 1, len(dataset), every=1000)
    labeled = dataset.subset(keep)
    labeled.labels = labels[keep]
    _log.end_operation(True, f"{keep.sum()} labeled", dropped=int((~keep).sum()))
    return labeled


@dataclass
class AmortizerModel:
    """
    Recurrent linking estimator.

    Attributes:
        network: GRU over H entries of width 4n + 8, scalar head
        input_norm: Per-entry feature normalization
        label_norm: Label normalization
        bounds: Cost bounds from the training labels
        keypoint_count: n
        history_length: H
    """
    network: nnet.Gru
    input_norm: nnet.Normalizer
    label_norm: nnet.Normalizer
    bounds: CostBounds
    keypoint_count: int
    history_length: int
    header: Dict[str, Any] = field(default_factory=dict)

    def sequences(self, features: np.ndarray) -> np.ndarray:
        """(K, H*w) features to normalized (K, H, w) sequences."""
        features = np.atleast_2d(features)
        width = keypoints.entry_width(self.keypoint_count)
        return self.input_norm.apply(features.reshape(features.shape[0], -1, width))


def link_theta_batch(model: AmortizerModel, features: np.ndarray) -> np.ndarray:
    """Estimated linking values for (K, H*(4n+8)) history features."""
    out = model.network.forward(model.sequences(features))
    return model.label_norm.invert(out)[:, 0]


def link_theta(model: AmortizerModel, history: keypoints.History) -> float:
    """Estimated linking value of one history."""
    return float(link_theta_batch(model, history.features()[None, :])[0])


def c_link_batch(model: AmortizerModel, features: np.ndarray) -> Tuple[np.ndarray, int]:
    """
    Normalized costs for many histories.

    Returns:
        (costs in [0, 1], number of histories whose estimate fell outside [β₀, β₁])
    """
    values = link_theta_batch(model, features)
    clamped = int(np.count_nonzero((values < model.bounds.beta0) | (values > model.bounds.beta1)))
    return np.atleast_1d(linking.c_link_from_value(values, model.bounds)), clamped


def c_link(model: AmortizerModel, history: keypoints.History) -> float:
    """Normalized linking cost of one history, clamped to [0, 1]."""
    value = link_theta(model, history)
    if not model.bounds.beta0 <= value <= model.bounds.beta1:
        _log.debug(f"Linking estimate {value:.4f} outside [{model.bounds.beta0:.4f}, "
                   f"{model.bounds.beta1:.4f}], cost clamped")
    return linking.c_link_from_value(value, model.bounds)


def train_amortizer(dataset: TransitionDataset, hyper: AmortizerHyper,
                    provenance: Optional[Dict[str, Any]] = None) -> Tuple[AmortizerModel, Dict[str, Any]]:
    """
    Train the estimator on the train split of a labeled dataset.

    Returns:
        (model, report) with loss curves, bounds and per-split metrics

    Raises:
        ValidationError: If labels are missing, the train split is empty or
            its labels are constant
        TrainingDivergedError: On a non-finite loss
    """
    if dataset.labels is None:
        raise ValidationError("Amortizer training needs a labeled dataset", field="labels")
    train_set = dataset.select(SplitTag.TRAIN)
    if len(train_set) == 0:
        raise ValidationError("Amortizer training needs a non-empty train split", field="dataset")
    n, h = dataset.keypoint_count, dataset.history_length
    width = keypoints.entry_width(n)
    bounds = CostBounds(float(train_set.labels.min()), float(train_set.labels.max()))

    seq = train_set.features.reshape(len(train_set), h, width)
    input_norm = nnet.Normalizer.fit(seq.reshape(-1, width))
    label_norm = nnet.Normalizer.fit(train_set.labels[:, None])
    network = nnet.Gru.init(nnet.RecurrentSpec(width, hyper.hidden_width, 1, h), hyper.seed)
    model = AmortizerModel(network, input_norm, label_norm, bounds, n, h,
                           {"provenance": provenance or dataset.header.get("provenance", {}),
                            "hook": dataset.header.get("hook"), "material": dataset.header.get("material")})

    val_set = dataset.select(SplitTag.VAL)
    validation = None
    if len(val_set) > 0:
        validation = (model.sequences(val_set.features), label_norm.apply(val_set.labels[:, None]))

    op = create_operation_context("train_cost")
    _log.start_operation(op, "Training linking estimator", samples=len(train_set), epochs=hyper.epochs)
    curves = nnet.train(network, model.sequences(train_set.features), label_norm.apply(train_set.labels[:, None]),
                        epochs=hyper.epochs, learning_rate=hyper.learning_rate,
                        batch_size=hyper.batch_size if hyper.batch_size > 0 else None, seed=hyper.seed,
                        validation=validation, patience=hyper.patience)
    report: Dict[str, Any] = {"training": curves.to_dict(),
                              "bounds": {"beta0": bounds.beta0, "beta1": bounds.beta1}}
    for tag in (SplitTag.TRAIN, SplitTag.VAL, SplitTag.TEST):
        subset = dataset.select(tag)
        if len(subset) > 1:
            report[str(tag)] = evaluate_amortizer(model, subset)
    _log.end_operation(True, f"bounds [{bounds.beta0:.3f}, {bounds.beta1:.3f}]", epochs=curves.epochs_run)
    return model, report


def evaluate_amortizer(model: AmortizerModel, dataset: TransitionDataset,
                       split: Optional[SplitTag] = None) -> Dict[str, float]:
    """
    Fidelity of the estimate against exact labels.

    Returns:
        samples, mse, pearson, spearman (rank correlation of -cost with the label)
    """
    data = dataset if split is None else dataset.select(split)
    if data.labels is None:
        raise ValidationError("Evaluation needs a labeled dataset", field="labels")
    if len(data) < 2:
        return {"samples": int(len(data))}
    estimate = link_theta_batch(model, data.features)
    costs, _ = c_link_batch(model, data.features)
    pearson = stats.pearsonr(estimate, data.labels)[0] if np.ptp(estimate) > 0 else float("nan")
    spearman = stats.spearmanr(-costs, data.labels)[0] if np.ptp(costs) > 0 else float("nan")
    return {"samples": int(len(data)), "mse": nnet.mse(estimate, data.labels),
            "pearson": float(pearson), "spearman": float(spearman)}


def linking_profile(model: AmortizerModel, trajectories: Sequence[np.ndarray]) -> np.ndarray:
    """
    Mean estimated linking per frame across trajectories.

    Args:
        trajectories: History features per trajectory, shape (T_i, H*(4n+8));
            all are cut to the shortest length

    Returns:
        Array of length min(T_i)
    """
    if not trajectories:
        return np.zeros(0)
    length = min(t.shape[0] for t in trajectories)
    values = np.stack([link_theta_batch(model, t[:length]) for t in trajectories])
    return values.mean(axis=0)


def save_amortizer(path: Path, model: AmortizerModel, provenance: Dict[str, Any]) -> Path:
    """Checkpoint an amortizer (nnet checkpoint, ``extra.model = amortizer``)."""
    extra = {"model": AMORTIZER_KIND, "keypoints": model.keypoint_count, "history": model.history_length,
             "beta0": model.bounds.beta0, "beta1": model.bounds.beta1,
             "hook": model.header.get("hook"), "material": model.header.get("material")}
    nnet.save_checkpoint(path, model.network, {"input": model.input_norm, "label": model.label_norm},
                         provenance, extra)
    _log.log_artifact("save", Path(path), model=AMORTIZER_KIND)
    return Path(path)


def load_amortizer(path: Path) -> AmortizerModel:
    """
    Load an amortizer checkpoint.

    Raises:
        CheckpointError: If missing, malformed or not an amortizer checkpoint
    """
    network, norms, header = nnet.load_checkpoint(path)
    extra = header.get("extra", {})
    if extra.get("model") != AMORTIZER_KIND or not isinstance(network, nnet.Gru):
        raise CheckpointError("Not an amortizer checkpoint", path=Path(path), reason="format",
                              details=f"found {extra.get('model')!r}")
    return AmortizerModel(network, norms["input"], norms["label"],
                          CostBounds(float(extra["beta0"]), float(extra["beta1"])),
                          int(extra["keypoints"]), int(extra["history"]),
                          {"provenance": header.get("provenance", {}), "hook": extra.get("hook"),
                           "material": extra.get("material")})
