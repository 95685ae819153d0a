"""A small feed-forward network engine in NumPy.

Layers: dense, batch_norm, relu, dropout, and a terminal softmax or sigmoid
head. Gradients are computed by hand-written backpropagation and applied
with RMSProp. Everything is float64 so finite-difference checks are tight.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

HEADS = ("softmax", "sigmoid")
LOSSES = ("cross_entropy", "mean_squared_error")
FORMAT = "ppba-net/1"


class NonFiniteError(FloatingPointError):
    """Activations or loss left the finite range."""


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class ModelFileError(ValueError):
    """Raised for corrupt or inconsistent model files."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    width: int | None = None
    rate: float | None = None

    def __post_init__(self):
        if self.kind == "dense":
            if self.width is None or self.width < 1:
                raise ValueError("dense layers need width >= 1")
        elif self.kind == "dropout":
            if self.rate is None or not 0.0 <= self.rate < 1.0:
                raise ValueError("dropout rate must be in [0, 1)")
        elif self.kind not in ("batch_norm", "relu") + HEADS:
            raise ValueError(f"unknown layer kind {self.kind!r}")


def dense(width: int) -> LayerSpec:
    return LayerSpec("dense", width=width)


def dropout(rate: float) -> LayerSpec:
    return LayerSpec("dropout", rate=rate)


BATCH_NORM = LayerSpec("batch_norm")
RELU = LayerSpec("relu")
SOFTMAX = LayerSpec("softmax")
SIGMOID = LayerSpec("sigmoid")


# -- layers -----------------------------------------------------------------

class Layer:
    kind = ""
    params: dict[str, np.ndarray]
    grads: dict[str, np.ndarray]

    def __init__(self, width: int):
        self.in_dim = width
        self.out_dim = width
        self.params = {}
        self.grads = {}

    def forward(self, x, training, rng):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def n_params(self) -> tuple[int, int]:
        """(trainable, non-trainable) parameter counts."""
        return sum(p.size for p in self.params.values()), 0

    def config(self) -> dict:
        return {"kind": self.kind}

    def state(self) -> dict:
        return {name: p.tolist() for name, p in self.params.items()}

    def load_state(self, state: dict) -> None:
        for name, p in self.params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ModelFileError(f"{self.kind}.{name}: shape {arr.shape}, expected {p.shape}")
            self.params[name] = arr


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        super().__init__(in_dim)
        self.out_dim = out_dim
        limit = math.sqrt(6.0 / (in_dim + out_dim))
        self.params = {
            "W": rng.uniform(-limit, limit, size=(in_dim, out_dim)),
            "b": np.zeros(out_dim),
        }

    def forward(self, x, training, rng):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, grad):
        self.grads = {"W": self._x.T @ grad, "b": grad.sum(axis=0)}
        return grad @ self.params["W"].T

    def config(self):
        return {"kind": self.kind, "width": self.out_dim}


class BatchNorm(Layer):
    kind = "batch_norm"
    eps = 1e-5
    momentum = 0.99

    def __init__(self, width: int):
        super().__init__(width)
        self.params = {"gamma": np.ones(width), "beta": np.zeros(width)}
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)

    def forward(self, x, training, rng):
        if training:
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
        else:
            mean, var = self.running_mean, self.running_var
        self._training = training
        self._inv_std = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mean) * self._inv_std
        return self.params["gamma"] * self._xhat + self.params["beta"]

    def backward(self, grad):
        xhat, inv_std = self._xhat, self._inv_std
        self.grads = {"gamma": (grad * xhat).sum(axis=0), "beta": grad.sum(axis=0)}
        dxhat = grad * self.params["gamma"]
        if not self._training:
            return dxhat * inv_std
        n = grad.shape[0]
        return inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))

    def n_params(self):
        return 2 * self.in_dim, 2 * self.in_dim

    def state(self):
        s = super().state()
        s["running_mean"] = self.running_mean.tolist()
        s["running_var"] = self.running_var.tolist()
        return s

    def load_state(self, state):
        super().load_state(state)
        for name in ("running_mean", "running_var"):
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != (self.in_dim,) or not np.all(np.isfinite(arr)):
                raise ModelFileError(f"batch_norm.{name}: bad running statistics")
            setattr(self, name, arr)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training, rng):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        return grad * self._mask


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, width: int, rate: float):
        super().__init__(width)
        self.rate = rate

    def forward(self, x, training, rng):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        # inverted scaling keeps the expected activation unchanged
        self._mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask

    def config(self):
        return {"kind": self.kind, "rate": self.rate}


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, training, rng):
        z = np.exp(x - x.max(axis=1, keepdims=True))
        self._out = z / z.sum(axis=1, keepdims=True)
        return self._out

    def backward(self, grad):
        p = self._out
        return p * (grad - (grad * p).sum(axis=1, keepdims=True))


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, training, rng):
        self._out = 0.5 * (1.0 + np.tanh(0.5 * x))
        return self._out

    def backward(self, grad):
        return grad * self._out * (1.0 - self._out)


def _make_layer(spec: LayerSpec, width: int, rng: np.random.Generator) -> Layer:
    if spec.kind == "dense":
        return Dense(width, spec.width, rng)
    if spec.kind == "batch_norm":
        return BatchNorm(width)
    if spec.kind == "relu":
        return ReLU(width)
    if spec.kind == "dropout":
        return Dropout(width, spec.rate)
    if spec.kind == "softmax":
        return Softmax(width)
    return Sigmoid(width)


# -- network ----------------------------------------------------------------

class NeuralNet:
    """An ordered stack of layers ending in a softmax or sigmoid head."""

    def __init__(self, input_dim: int, specs: Sequence[LayerSpec], seed: int = 0):
        specs = list(specs)
        if input_dim < 1:
            raise ValueError("input_dim must be positive")
        if not specs or specs[-1].kind not in HEADS:
            raise ValueError("the last layer must be a softmax or sigmoid head")
        if any(s.kind in HEADS for s in specs[:-1]):
            raise ValueError("only one terminal head is allowed")
        rng = np.random.default_rng(seed)
        self.input_dim = input_dim
        self.specs = specs
        self.seed = seed
        self.layers: list[Layer] = []
        width = input_dim
        for spec in specs:
            layer = _make_layer(spec, width, rng)
            self.layers.append(layer)
            width = layer.out_dim
        self.output_dim = width
        self.train_config: dict | None = None

    @property
    def head(self) -> str:
        return self.specs[-1].kind

    def n_params(self) -> tuple[int, int]:
        """(total, trainable) parameter counts."""
        trainable = fixed = 0
        for layer in self.layers:
            t, f = layer.n_params()
            trainable += t
            fixed += f
        return trainable + fixed, trainable

    def forward(self, batch, training: bool = False, rng: np.random.Generator | None = None):
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"expected input with {self.input_dim} columns, got shape {x.shape}")
        if training and rng is None:
            rng = np.random.default_rng(self.seed)
        for layer in self.layers:
            x = layer.forward(x, training, rng)
        if not np.all(np.isfinite(x)):
            raise NonFiniteError("non-finite activations in forward pass")
        return x

    def backward(self, grad) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def trainable(self) -> list[tuple[Layer, str]]:
        return [(layer, name) for layer in self.layers for name in layer.params]

    def get_weights(self) -> list[np.ndarray]:
        return [layer.params[name].copy() for layer, name in self.trainable()]

    def copy(self) -> "NeuralNet":
        return from_dict(to_dict(self))


def predict(net: NeuralNet, vector) -> np.ndarray:
    """Inference-mode prediction vector(s); requires a softmax head."""
    if net.head != "softmax":
        raise ValueError("predict needs a softmax classifier head")
    return net.forward(vector, training=False)


# -- losses -----------------------------------------------------------------

def loss_value(outputs: np.ndarray, targets: np.ndarray, loss: str) -> tuple[float, np.ndarray]:
    """Mean batch loss and its gradient with respect to the network outputs."""
    if outputs.shape != targets.shape:
        raise ValueError(f"outputs {outputs.shape} and targets {targets.shape} differ")
    n = outputs.shape[0]
    if loss == "cross_entropy":
        p = np.clip(outputs, 1e-12, 1.0)
        value = -float(np.sum(targets * np.log(p))) / n
        grad = np.where(outputs > 1e-12, -targets / p, 0.0) / n
    elif loss == "mean_squared_error":
        diff = outputs - targets
        value = float(np.mean(diff * diff))
        grad = 2.0 * diff / diff.size
    else:
        raise ValueError(f"unknown loss {loss!r}")
    return value, grad


def loss_and_grad(net: NeuralNet, batch, targets, loss: str, training: bool = True,
                  rng: np.random.Generator | None = None):
    """Return the mean loss and one gradient dict per layer, in layer order."""
    targets = np.asarray(targets, dtype=np.float64)
    outputs = net.forward(batch, training=training, rng=rng)
    value, grad = loss_value(outputs, targets, loss)
    net.backward(grad)
    return value, [dict(layer.grads) for layer in net.layers]


# -- training ---------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    loss: str = "cross_entropy"
    learning_rate: float = 0.001
    rho: float = 0.9
    epsilon_num: float = 1e-8
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0
    patience: int | None = None
    min_delta: float = 1e-5

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must be in [0, 1)")


@dataclass
class TrainingHistory:
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.loss)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["epochs_run"] = self.epochs_run
        return d


def _accuracy(outputs, targets) -> float:
    return float(np.mean(outputs.argmax(axis=1) == targets.argmax(axis=1)))


def evaluate(net: NeuralNet, inputs, targets, loss: str) -> tuple[float, float | None]:
    outputs = net.forward(inputs, training=False)
    value, _ = loss_value(outputs, np.asarray(targets, dtype=np.float64), loss)
    acc = _accuracy(outputs, targets) if net.head == "softmax" else None
    return value, acc


def train(net: NeuralNet, inputs, targets, cfg: TrainConfig,
          validation: tuple | None = None) -> TrainingHistory:
    """Mini-batch RMSProp training.

    Each epoch reshuffles the rows; reported training loss/accuracy are the
    running averages over that epoch's batches, validation metrics come from
    an inference-mode pass. With ``cfg.patience`` set, training stops once
    validation loss fails to improve by ``cfg.min_delta`` for that many epochs.
    """
    X = np.asarray(inputs, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    if X.shape[0] == 0 or X.shape[0] != Y.shape[0]:
        raise ValueError("inputs and targets must be non-empty with matching rows")
    rng = np.random.default_rng(cfg.seed)
    slots = net.trainable()
    accum = [np.zeros_like(layer.params[name]) for layer, name in slots]
    history = TrainingHistory()
    best, stale = math.inf, 0
    n = X.shape[0]
    classifier = net.head == "softmax"

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total_loss = 0.0
        hits = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = X[idx], Y[idx]
            try:
                out = net.forward(xb, training=True, rng=rng)
            except NonFiniteError:
                raise TrainingDivergedError(epoch, math.nan) from None
            value, grad = loss_value(out, yb, cfg.loss)
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch, value)
            net.backward(grad)
            total_loss += value * len(idx)
            if classifier:
                hits += int(np.sum(out.argmax(axis=1) == yb.argmax(axis=1)))
            for i, (layer, name) in enumerate(slots):
                g = layer.grads[name]
                accum[i] = cfg.rho * accum[i] + (1.0 - cfg.rho) * g * g
                layer.params[name] = layer.params[name] - (
                    cfg.learning_rate * g / np.sqrt(accum[i] + cfg.epsilon_num))
        history.loss.append(total_loss / n)
        if classifier:
            history.accuracy.append(hits / n)
        if validation is not None:
            try:
                v_loss, v_acc = evaluate(net, validation[0], validation[1], cfg.loss)
            except NonFiniteError:
                raise TrainingDivergedError(epoch, math.nan) from None
            history.val_loss.append(v_loss)
            if v_acc is not None:
                history.val_accuracy.append(v_acc)
            if cfg.patience is not None:
                if v_loss < best - cfg.min_delta:
                    best, stale = v_loss, 0
                else:
                    stale += 1
                    if stale >= cfg.patience:
                        history.stopped_early = True
                        break
    net.train_config = asdict(cfg)
    return history


# -- persistence ------------------------------------------------------------

def to_dict(net: NeuralNet) -> dict:
    return {
        "format": FORMAT,
        "input_dim": net.input_dim,
        "seed": net.seed,
        "layers": [dict(layer.config(), state=layer.state()) for layer in net.layers],
        "train_config": net.train_config,
    }


def from_dict(obj: dict) -> NeuralNet:
    try:
        if obj.get("format") != FORMAT:
            raise ModelFileError(f"unsupported model format {obj.get('format')!r}")
        specs = [LayerSpec(l["kind"], l.get("width"), l.get("rate")) for l in obj["layers"]]
        net = NeuralNet(int(obj["input_dim"]), specs, int(obj.get("seed", 0)))
        for layer, rec in zip(net.layers, obj["layers"]):
            layer.load_state(rec["state"])
        net.train_config = obj.get("train_config")
    except ModelFileError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"malformed model record: {exc}") from exc
    return net


def save(net: NeuralNet, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        json.dump(to_dict(net), fh)
        fh.write("\n")


def load(path: str | os.PathLike) -> NeuralNet:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: not a valid model file ({exc})") from exc
    return from_dict(obj)
