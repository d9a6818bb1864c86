"""
Small numpy neural-network kernel.

Dense multilayer perceptrons and a gated recurrent (GRU) network with a
linear head, mean-squared-error loss with hand-written reverse-mode
gradients, the Adam optimizer, per-feature normalization and a versioned
npz checkpoint format. Tensors are float64 numpy arrays in C order.

Parameters live in ordered dicts of arrays; every model exposes
``forward(x)`` and ``loss_and_grads(x, target)`` so the optimizer and the
trainer work on either network.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from ..models.enums import Activation
from ..utils.exceptions import CheckpointError, ShapeMismatchError, TrainingDivergedError, ValidationError
from ..utils.logging import get_operation_logger
from ..utils.persistence import load_npz, save_npz

CHECKPOINT_FORMAT = "strap-nnet"
CHECKPOINT_VERSION = 1
STD_FLOOR = 1e-8
GRADIENT_FLOOR = 1e-6

Params = Dict[str, np.ndarray]

_log = get_operation_logger(__name__)


def _activate(kind: Activation, a: np.ndarray) -> np.ndarray:
    if kind is Activation.TANH:
        return np.tanh(a)
    if kind is Activation.RELU:
        return np.maximum(a, 0.0)
    return a


def _activation_grad(kind: Activation, a: np.ndarray, out: np.ndarray) -> np.ndarray:
    if kind is Activation.TANH:
        return 1.0 - out * out
    if kind is Activation.RELU:
        return (a > 0.0).astype(np.float64)
    return np.ones_like(a)


def _sigmoid(a: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _uniform(rng: np.random.Generator, fan_in: int, shape, activation: Activation) -> np.ndarray:
    limit = math.sqrt((6.0 if activation is Activation.RELU else 3.0) / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def mse(prediction: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error over all entries."""
    diff = prediction - target
    return float(np.mean(diff * diff))


@dataclass(frozen=True)
class MlpSpec:
    """
    Dense network layout.

    Attributes:
        widths: Input width, hidden widths, output width
        activation: Hidden activation; the head is linear
    """
    widths: Tuple[int, ...]
    activation: Activation = Activation.RELU

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "activation", Activation(self.activation))
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ValidationError("MLP needs at least two widths, each >= 1", field="widths",
                                  value=self.widths)

    @classmethod
    def uniform(cls, input_width: int, output_width: int, hidden_width: int, layers: int,
                activation: Activation = Activation.RELU) -> "MlpSpec":
        """``layers`` weight layers with equal hidden widths."""
        if layers < 1:
            raise ValidationError("MLP needs at least one layer", field="layers", value=layers)
        return cls((input_width,) + (hidden_width,) * (layers - 1) + (output_width,), activation)

    @property
    def weight_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def input_width(self) -> int:
        return self.widths[0]

    @property
    def output_width(self) -> int:
        return self.widths[-1]

    def to_dict(self) -> Dict[str, Any]:
        return {"widths": list(self.widths), "activation": str(self.activation)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MlpSpec":
        return cls(tuple(data["widths"]), Activation(data["activation"]))


@dataclass(frozen=True)
class RecurrentSpec:
    """
    Gated recurrent network layout.

    Attributes:
        input_width: Features per time step
        hidden_width: Recurrent state width
        output_width: Width of the linear head applied to the last state
        sequence_length: Expected steps per sequence (H)
    """
    input_width: int
    hidden_width: int = 64
    output_width: int = 1
    sequence_length: int = 20

    def __post_init__(self):
        for name in ("input_width", "hidden_width", "output_width", "sequence_length"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1", field=name, value=getattr(self, name))

    def to_dict(self) -> Dict[str, Any]:
        return {"input_width": self.input_width, "hidden_width": self.hidden_width,
                "output_width": self.output_width, "sequence_length": self.sequence_length}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RecurrentSpec":
        return cls(**{k: int(v) for k, v in data.items()})


class Mlp:
    """Dense network: hidden layers with the MlpSpec activation, linear head."""

    kind = "mlp"

    def __init__(self, spec: MlpSpec, params: Params):
        self.spec = spec
        self.params = params

    @classmethod
    def init(cls, spec: MlpSpec, seed: int = 0) -> "Mlp":
        """Seeded uniform fan-in initialization, zero biases."""
        rng = np.random.default_rng(seed)
        params: Params = {}
        for k, (fan_in, fan_out) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
            head = k == spec.weight_layers - 1
            params[f"W{k}"] = _uniform(rng, fan_in, (fan_in, fan_out),
                                       Activation.IDENTITY if head else spec.activation)
            params[f"b{k}"] = np.zeros(fan_out)
        return cls(spec, params)

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.input_width:
            raise ShapeMismatchError("MLP input has the wrong shape", field="input",
                                     expected=(-1, self.spec.input_width), actual=x.shape)
        return x

    def _forward(self, x: np.ndarray):
        acts = [x]
        pre = []
        h = x
        last = self.spec.weight_layers - 1
        for k in range(self.spec.weight_layers):
            a = h @ self.params[f"W{k}"] + self.params[f"b{k}"]
            pre.append(a)
            h = a if k == last else _activate(self.spec.activation, a)
            acts.append(h)
        return h, (acts, pre)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Batch forward pass, x of shape (B, input_width)."""
        return self._forward(self._check(x))[0]

    def loss_and_grads(self, x: np.ndarray, target: np.ndarray) -> Tuple[float, Params]:
        """MSE loss and its gradient with respect to every parameter."""
        x = self._check(x)
        out, (acts, pre) = self._forward(x)
        target = np.asarray(target, dtype=np.float64)
        if target.shape != out.shape:
            raise ShapeMismatchError("Target has the wrong shape", field="target",
                                     expected=out.shape, actual=target.shape)
        loss = mse(out, target)
        grads: Params = {}
        delta = 2.0 * (out - target) / out.size
        for k in reversed(range(self.spec.weight_layers)):
            if k != self.spec.weight_layers - 1:
                delta = delta * _activation_grad(self.spec.activation, pre[k], acts[k + 1])
            grads[f"W{k}"] = acts[k].T @ delta
            grads[f"b{k}"] = delta.sum(axis=0)
            delta = delta @ self.params[f"W{k}"].T
        return loss, {name: grads[name] for name in self.params}


class Gru:
    """
    GRU over a (B, T, input_width) sequence; a linear head maps the last state.

    Gates: z = σ(x·Wz + h·Uz + bz), r = σ(x·Wr + h·Ur + br),
    n = tanh(x·Wn + (r∘h)·Un + bn), h' = (1 − z)∘n + z∘h, starting from h = 0.
    """

    kind = "gru"
    _GATES = ("z", "r", "n")

    def __init__(self, spec: RecurrentSpec, params: Params):
        self.spec = spec
        self.params = params

    @classmethod
    def init(cls, spec: RecurrentSpec, seed: int = 0) -> "Gru":
        rng = np.random.default_rng(seed)
        i, h, o = spec.input_width, spec.hidden_width, spec.output_width
        params: Params = {}
        for gate in cls._GATES:
            params[f"W{gate}"] = _uniform(rng, i, (i, h), Activation.TANH)
            params[f"U{gate}"] = _uniform(rng, h, (h, h), Activation.TANH)
            params[f"b{gate}"] = np.zeros(h)
        params["Wo"] = _uniform(rng, h, (h, o), Activation.IDENTITY)
        params["bo"] = np.zeros(o)
        return cls(spec, params)

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.spec.input_width:
            raise ShapeMismatchError("Recurrent input has the wrong shape", field="input",
                                     expected=(-1, -1, self.spec.input_width), actual=x.shape)
        return x

    def _forward(self, x: np.ndarray):
        p = self.params
        h = np.zeros((x.shape[0], self.spec.hidden_width))
        cache = []
        for t in range(x.shape[1]):
            xt = x[:, t, :]
            z = _sigmoid(xt @ p["Wz"] + h @ p["Uz"] + p["bz"])
            r = _sigmoid(xt @ p["Wr"] + h @ p["Ur"] + p["br"])
            n = np.tanh(xt @ p["Wn"] + (r * h) @ p["Un"] + p["bn"])
            cache.append((xt, h, z, r, n))
            h = (1.0 - z) * n + z * h
        return h @ p["Wo"] + p["bo"], h, cache

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Sequence batch forward pass; returns (B, output_width)."""
        return self._forward(self._check(x))[0]

    def loss_and_grads(self, x: np.ndarray, target: np.ndarray) -> Tuple[float, Params]:
        """MSE loss and gradients by backpropagation through time."""
        x = self._check(x)
        out, h_last, cache = self._forward(x)
        target = np.asarray(target, dtype=np.float64)
        if target.shape != out.shape:
            raise ShapeMismatchError("Target has the wrong shape", field="target",
                                     expected=out.shape, actual=target.shape)
        p = self.params
        loss = mse(out, target)
        grads = {name: np.zeros_like(value) for name, value in p.items()}
        dout = 2.0 * (out - target) / out.size
        grads["Wo"] = h_last.T @ dout
        grads["bo"] = dout.sum(axis=0)
        dh = dout @ p["Wo"].T
        for xt, h_prev, z, r, n in reversed(cache):
            dn = dh * (1.0 - z)
            dz = dh * (h_prev - n)
            dh_prev = dh * z
            dan = dn * (1.0 - n * n)
            grads["Wn"] += xt.T @ dan
            grads["Un"] += (r * h_prev).T @ dan
            grads["bn"] += dan.sum(axis=0)
            drh = dan @ p["Un"].T
            dr = drh * h_prev
            dh_prev += drh * r
            daz = dz * z * (1.0 - z)
            grads["Wz"] += xt.T @ daz
            grads["Uz"] += h_prev.T @ daz
            grads["bz"] += daz.sum(axis=0)
            dh_prev += daz @ p["Uz"].T
            dar = dr * r * (1.0 - r)
            grads["Wr"] += xt.T @ dar
            grads["Ur"] += h_prev.T @ dar
            grads["br"] += dar.sum(axis=0)
            dh_prev += dar @ p["Ur"].T
            dh = dh_prev
        return loss, grads


Model = Union[Mlp, Gru]


def forward(model: Model, x: np.ndarray) -> np.ndarray:
    """Deterministic forward pass of either network."""
    return model.forward(x)


def backward(model: Model, x: np.ndarray, target: np.ndarray) -> Tuple[Params, float]:
    """
    Gradients of the MSE loss.

    Raises:
        ShapeMismatchError: If input or target shapes do not match the model's layer sizes
        TrainingDivergedError: If the loss is not finite
    """
    loss, grads = model.loss_and_grads(x, target)
    if not math.isfinite(loss):
        raise TrainingDivergedError("Loss is not finite", loss=loss)
    return grads, loss


@dataclass
class AdamState:
    """
    Adam optimizer state.

    Attributes:
        learning_rate: Step size
        beta1: First-moment decay
        beta2: Second-moment decay
        eps: Denominator guard
        m: First moments per parameter
        v: Second moments per parameter
        step: Updates taken
    """
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    step: int = 0


def adam_step(params: Params, grads: Params, state: AdamState) -> Tuple[Params, AdamState]:
    """
    One bias-corrected Adam update.

    Returns new parameter and state objects; the inputs are left untouched.
    """
    step = state.step + 1
    lr_t = state.learning_rate * math.sqrt(1.0 - state.beta2 ** step) / (1.0 - state.beta1 ** step)
    new_params: Params = {}
    new_m: Params = {}
    new_v: Params = {}
    for name, value in params.items():
        g = grads[name]
        if g.shape != value.shape:
            raise ShapeMismatchError("Gradient shape differs from its parameter", field=name,
                                     expected=value.shape, actual=g.shape)
        m = state.beta1 * state.m.get(name, np.zeros_like(value)) + (1.0 - state.beta1) * g
        v = state.beta2 * state.v.get(name, np.zeros_like(value)) + (1.0 - state.beta2) * g * g
        new_m[name] = m
        new_v[name] = v
        # bias correction folded into lr_t; eps scaled to match the textbook form
        new_params[name] = value - lr_t * m / (np.sqrt(v) + state.eps * math.sqrt(1.0 - state.beta2 ** step))
    return new_params, AdamState(state.learning_rate, state.beta1, state.beta2, state.eps,
                                 new_m, new_v, step)


@dataclass
class Normalizer:
    """Per-feature affine normalization fitted on training data."""
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, data: np.ndarray, axis=0) -> "Normalizer":
        data = np.asarray(data, dtype=np.float64)
        return cls(data.mean(axis=axis), np.maximum(data.std(axis=axis), STD_FLOOR))

    @classmethod
    def identity(cls, width: int) -> "Normalizer":
        return cls(np.zeros(width), np.ones(width))

    def apply(self, data: np.ndarray) -> np.ndarray:
        return (np.asarray(data, dtype=np.float64) - self.mean) / self.std

    def invert(self, data: np.ndarray) -> np.ndarray:
        return np.asarray(data, dtype=np.float64) * self.std + self.mean


def gradient_check(model: Model, x: np.ndarray, target: np.ndarray, step: float = 1e-5) -> float:
    """
    Largest relative error between analytic and central-difference gradients.

    Relative error is ``|analytic - numeric| / max(|analytic| + |numeric|, 1e-6)``.
    """
    _, grads = model.loss_and_grads(x, target)
    worst = 0.0
    for name, value in model.params.items():
        flat = value.reshape(-1)
        analytic = grads[name].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            plus = mse(model.forward(x), target)
            flat[i] = original - step
            minus = mse(model.forward(x), target)
            flat[i] = original
            numeric = (plus - minus) / (2.0 * step)
            error = abs(analytic[i] - numeric) / max(abs(analytic[i]) + abs(numeric), GRADIENT_FLOOR)
            worst = max(worst, error)
    return worst


@dataclass
class TrainingReport:
    """Loss curves and stopping point of one training run."""
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    best_epoch: int = -1
    epochs_run: int = 0
    stopped_early: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {"train_loss": self.train_loss, "val_loss": self.val_loss, "best_epoch": self.best_epoch,
                "epochs_run": self.epochs_run, "stopped_early": self.stopped_early}


def train(model: Model, x: np.ndarray, y: np.ndarray, epochs: int, learning_rate: float,
          batch_size: Optional[int] = None, seed: int = 0,
          validation: Optional[Tuple[np.ndarray, np.ndarray]] = None, patience: Optional[int] = None,
          on_epoch: Optional[Callable[[int, float, Optional[float]], None]] = None) -> TrainingReport:
    """
    Minibatch Adam on the MSE loss (normalized inputs and targets expected).

    Batches follow a seeded permutation per epoch; ``batch_size=None`` trains
    full-batch in index order. With validation data the best validation
    parameters are restored at the end, and training stops after ``patience``
    epochs without improvement.

    Raises:
        TrainingDivergedError: On a non-finite loss, with the epoch recorded
    """
    count = x.shape[0]
    if count == 0:
        raise ValidationError("Cannot train on an empty dataset", field="samples", value=0)
    rng = np.random.default_rng(seed)
    state = AdamState(learning_rate=learning_rate)
    report = TrainingReport()
    best_val = math.inf
    best_params = model.params
    since_best = 0
    size = count if batch_size is None else max(1, min(int(batch_size), count))
    for epoch in range(epochs):
        order = np.arange(count) if batch_size is None else rng.permutation(count)
        total = 0.0
        for start in range(0, count, size):
            idx = order[start:start + size]
            loss, grads = model.loss_and_grads(x[idx], y[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError("Training loss is not finite", epoch=epoch, loss=loss)
            model.params, state = adam_step(model.params, grads, state)
            total += loss * idx.size
        report.train_loss.append(total / count)
        report.epochs_run = epoch + 1
        val_loss = None
        if validation is not None and validation[0].shape[0] > 0:
            val_loss = mse(model.forward(validation[0]), validation[1])
            if not math.isfinite(val_loss):
                raise TrainingDivergedError("Validation loss is not finite", epoch=epoch, loss=val_loss)
            report.val_loss.append(val_loss)
            if val_loss < best_val:
                best_val, best_params, since_best = val_loss, model.params, 0
                report.best_epoch = epoch
            else:
                since_best += 1
        if on_epoch is not None:
            on_epoch(epoch, report.train_loss[-1], val_loss)
        if patience is not None and validation is not None and since_best >= patience:
            report.stopped_early = True
            break
    if report.best_epoch >= 0:
        model.params = best_params
    else:
        report.best_epoch = report.epochs_run - 1
    return report


def build_model(kind: str, spec_data: Dict[str, Any], params: Params) -> Model:
    """Rebuild a network from its checkpoint kind, spec dict and parameters."""
    if kind == Mlp.kind:
        return Mlp(MlpSpec.from_dict(spec_data), params)
    if kind == Gru.kind:
        return Gru(RecurrentSpec.from_dict(spec_data), params)
    raise ValueError(f"Unknown network kind: {kind}")


def save_checkpoint(path: Path, model: Model, normalizers: Dict[str, Normalizer],
                    provenance: Dict[str, Any], extra: Optional[Dict[str, Any]] = None) -> Path:
    """
    Write a network checkpoint.

    Layout: JSON header ``{format, version, kind, spec, provenance, extra}``;
    arrays ``param.<name>`` and ``norm.<name>.mean`` / ``norm.<name>.std``.
    """
    header = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "kind": model.kind,
              "spec": model.spec.to_dict(), "provenance": provenance, "extra": extra or {}}
    arrays = {f"param.{name}": value for name, value in model.params.items()}
    for name, norm in normalizers.items():
        arrays[f"norm.{name}.mean"] = norm.mean
        arrays[f"norm.{name}.std"] = norm.std
    return save_npz(path, header, arrays)


def load_checkpoint(path: Path) -> Tuple[Model, Dict[str, Normalizer], Dict[str, Any]]:
    """
    Read a checkpoint written by :func:`save_checkpoint`.

    Returns:
        (model, normalizers, header)

    Raises:
        CheckpointError: If missing, malformed, of another format or version
    """
    header, arrays = load_npz(path, expected_format=CHECKPOINT_FORMAT)
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError("Unsupported checkpoint version", path=Path(path), reason="version",
                              details=f"found {header.get('version')!r}")
    params = {name[len("param."):]: value for name, value in arrays.items() if name.startswith("param.")}
    norm_names = sorted({name.split(".")[1] for name in arrays if name.startswith("norm.")})
    normalizers = {n: Normalizer(arrays[f"norm.{n}.mean"], arrays[f"norm.{n}.std"]) for n in norm_names}
    try:
        model = build_model(header["kind"], header["spec"], params)
    except (KeyError, ValueError, ValidationError) as e:
        raise CheckpointError("Checkpoint header does not describe a network", path=Path(path),
                              reason="malformed", details=str(e))
    _log.log_artifact("load", Path(path), kind=header["kind"])
    return model, normalizers, header
