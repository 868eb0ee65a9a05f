"""Dense feedforward networks in numpy: forward pass, backprop, optimizers, training.

Weights are stored as (output_dim x input_dim) matrices so that a layer computes
``act(W @ x + b)``; batched inputs are rows.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ArtifactIOError, ShapeError, TrainingDiverged, ValidationError
from .featurizer import Dataset

ACTIVATIONS = ("sigmoid", "relu", "tanh", "softmax", "linear")
PROB_FLOOR = 1e-12
MODEL_MAGIC = b"MLPM"
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    activation: str = "sigmoid"

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValidationError(f"layer dims must be >= 1, got {self.input_dim}x{self.output_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")


def build_layers(input_dim: int, hidden: Sequence[int], output_dim: int,
                 hidden_activation: str = "sigmoid",
                 output_activation: str = "softmax") -> list[LayerSpec]:
    dims = [input_dim, *hidden, output_dim]
    acts = [hidden_activation] * len(hidden) + [output_activation]
    return [LayerSpec(i, o, a) for i, o, a in zip(dims, dims[1:], acts)]


@dataclass
class Normalizer:
    """Per-feature affine map ``(x - shift) / scale``."""

    shift: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit_minmax(cls, X: np.ndarray) -> "Normalizer":
        X = np.asarray(X, dtype=np.float64)
        lo, hi = X.min(axis=0), X.max(axis=0)
        span = hi - lo
        return cls(lo, np.where(span > 0, span, 1.0))

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (X - self.shift) / self.scale


@dataclass
class MlpModel:
    layers: tuple[LayerSpec, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    normalizer: Normalizer | None = None
    threshold: float = 0.5

    def __post_init__(self):
        self.layers = tuple(self.layers)
        if not self.layers:
            raise ValidationError("model needs at least one layer")
        if len(self.weights) != len(self.layers) or len(self.biases) != len(self.layers):
            raise ShapeError("one weight matrix and bias vector per layer required")
        for i, spec in enumerate(self.layers):
            if i and self.layers[i - 1].output_dim != spec.input_dim:
                raise ShapeError(f"layer {i} input_dim {spec.input_dim} does not chain "
                                 f"with previous output_dim {self.layers[i - 1].output_dim}")
            if spec.activation == "softmax" and i != len(self.layers) - 1:
                raise ValidationError("softmax is only allowed on the final layer")
            if self.weights[i].shape != (spec.output_dim, spec.input_dim):
                raise ShapeError(f"layer {i} weight shape {self.weights[i].shape} != "
                                 f"{(spec.output_dim, spec.input_dim)}")
            if self.biases[i].shape != (spec.output_dim,):
                raise ShapeError(f"layer {i} bias shape {self.biases[i].shape}")
            if not (np.isfinite(self.weights[i]).all() and np.isfinite(self.biases[i]).all()):
                raise ValidationError(f"layer {i} has non-finite parameters")
        if self.normalizer is not None:
            d = self.input_dim
            if self.normalizer.shift.shape != (d,) or self.normalizer.scale.shape != (d,):
                raise ShapeError("normalizer does not match input dimension")

    @classmethod
    def initialize(cls, layers: Sequence[LayerSpec], rng: np.random.Generator,
                   weight_scale: float = 1.0, threshold: float = 0.5) -> "MlpModel":
        """Uniform(+-1/sqrt(fan_in)) weights and biases, multiplied by ``weight_scale``."""
        weights, biases = [], []
        for spec in layers:
            bound = 1.0 / np.sqrt(spec.input_dim)
            weights.append(rng.uniform(-bound, bound, (spec.output_dim, spec.input_dim)) * weight_scale)
            biases.append(rng.uniform(-bound, bound, spec.output_dim) * weight_scale)
        return cls(tuple(layers), weights, biases, None, threshold)

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].output_dim

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in (W0, b0, W1, b1, ...) order; views, not copies."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "MlpModel":
        norm = None
        if self.normalizer is not None:
            norm = Normalizer(self.normalizer.shift.copy(), self.normalizer.scale.copy())
        return MlpModel(self.layers, [W.copy() for W in self.weights],
                        [b.copy() for b in self.biases], norm, self.threshold)

    # serialization ---------------------------------------------------------
    def to_bytes(self) -> bytes:
        header = {
            "format_version": MODEL_FORMAT_VERSION,
            "layers": [{"input_dim": s.input_dim, "output_dim": s.output_dim,
                        "activation": s.activation} for s in self.layers],
            "threshold": float(self.threshold),
            "normalizer": self.normalizer is not None,
        }
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        chunks = [MODEL_MAGIC, struct.pack("<I", len(blob)), blob]
        for W, b in zip(self.weights, self.biases):
            chunks.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
            chunks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
        if self.normalizer is not None:
            chunks.append(np.ascontiguousarray(self.normalizer.shift, dtype="<f8").tobytes())
            chunks.append(np.ascontiguousarray(self.normalizer.scale, dtype="<f8").tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes) -> "MlpModel":
        model, end = _decode_model(data, 0)
        if end != len(data):
            raise ValidationError(f"{len(data) - end} trailing bytes after model")
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "MlpModel":
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise ArtifactIOError(f"cannot read model {path}: {exc.strerror or exc}") from exc
        return cls.from_bytes(data)


def _decode_model(data: bytes, offset: int) -> tuple[MlpModel, int]:
    if data[offset:offset + 4] != MODEL_MAGIC:
        raise ValidationError("not a model file (bad magic)")
    try:
        (hlen,) = struct.unpack_from("<I", data, offset + 4)
        pos = offset + 8
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        if header["format_version"] != MODEL_FORMAT_VERSION:
            raise ValidationError(f"unsupported model format {header['format_version']}")
        layers = tuple(LayerSpec(**spec) for spec in header["layers"])

        def take(count):
            nonlocal pos
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)
            pos += 8 * count
            return arr

        weights, biases = [], []
        for s in layers:
            weights.append(take(s.output_dim * s.input_dim).reshape(s.output_dim, s.input_dim))
            biases.append(take(s.output_dim))
        norm = None
        if header["normalizer"]:
            d = layers[0].input_dim
            norm = Normalizer(take(d), take(d))
    except (struct.error, KeyError, TypeError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"corrupt model file: {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"truncated model file: {exc}") from exc
    return MlpModel(layers, weights, biases, norm, header["threshold"]), pos


# activations ---------------------------------------------------------------

def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "sigmoid":
        return _sigmoid(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "softmax":
        return _softmax(z)
    return z


def activation_delta(name: str, z: np.ndarray, a: np.ndarray, grad_a: np.ndarray) -> np.ndarray:
    """Chain ``dL/da`` through the activation to ``dL/dz``."""
    if name == "sigmoid":
        return grad_a * a * (1.0 - a)
    if name == "relu":
        return grad_a * (z > 0)  # derivative at exactly 0 is 0
    if name == "tanh":
        return grad_a * (1.0 - a * a)
    if name == "softmax":
        return a * (grad_a - (grad_a * a).sum(axis=-1, keepdims=True))
    return grad_a


# forward / backward ----------------------------------------------------------

@dataclass
class Trace:
    """Per-layer inputs and pre-activations of one batched forward pass."""

    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    output: np.ndarray | None = None


def _check_input(model: MlpModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim not in (1, 2) or X.shape[-1] != model.input_dim:
        raise ShapeError(f"expected input of length {model.input_dim}, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise ValidationError("input contains non-finite values")
    return X


def trace_forward(model: MlpModel, X: np.ndarray, normalize: bool = True) -> Trace:
    """Batched forward pass (rows of ``X``) keeping what backprop needs."""
    a = X
    if normalize and model.normalizer is not None:
        a = model.normalizer.apply(a)
    tr = Trace()
    for spec, W, b in zip(model.layers, model.weights, model.biases):
        tr.inputs.append(a)
        z = a @ W.T + b
        tr.pre.append(z)
        a = activate(spec.activation, z)
    tr.output = a
    return tr


def forward(model: MlpModel, x) -> np.ndarray:
    """Final-layer activations for one input vector or a batch of rows."""
    X = _check_input(model, x)
    batch = np.atleast_2d(X)
    out = trace_forward(model, batch).output
    return out[0] if X.ndim == 1 else out


def backprop(model: MlpModel, tr: Trace, grad_pre_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Gradients given ``dL/dz`` at the final pre-activation.

    Returns parameter gradients in ``model.params()`` order and ``dL/dx`` with
    respect to the raw (un-normalized) input rows.
    """
    grads: list[np.ndarray] = [None] * (2 * len(model.layers))
    delta = grad_pre_out
    for i in range(len(model.layers) - 1, -1, -1):
        grads[2 * i] = delta.T @ tr.inputs[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        grad_in = delta @ model.weights[i]
        if i:
            prev = model.layers[i - 1].activation
            z = tr.pre[i - 1]
            delta = activation_delta(prev, z, tr.inputs[i], grad_in)
    if model.normalizer is not None:
        grad_in = grad_in / model.normalizer.scale
    return grads, grad_in


def cross_entropy(probabilities, true_label: int) -> float:
    p = np.asarray(probabilities, dtype=np.float64)
    if abs(p.sum() - 1.0) > 1e-6:
        raise ValidationError(f"probabilities sum to {p.sum()}, not 1")
    if not (isinstance(true_label, (int, np.integer)) and 0 <= true_label < len(p)):
        raise ValidationError(f"label index {true_label!r} out of range for {len(p)} classes")
    return float(-np.log(max(p[true_label], PROB_FLOOR)))


def _ce_delta(P: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """d(mean CE)/d(logits) for a softmax head, honouring the probability floor."""
    n = len(idx)
    delta = P.copy()
    rows = np.arange(n)
    delta[rows, idx] -= 1.0
    delta[P[rows, idx] < PROB_FLOOR] = 0.0
    return delta / n


def backward(model: MlpModel, x, true_label) -> list[np.ndarray]:
    """Analytic gradient of cross-entropy(forward(x)) for class index ``true_label``.

    ``x`` may be a batch, in which case the loss is the batch mean.
    """
    if model.layers[-1].activation != "softmax":
        raise ValidationError("backward() needs a softmax output layer")
    X = _check_input(model, x)
    batch = np.atleast_2d(X)
    idx = np.atleast_1d(np.asarray(true_label, dtype=np.int64))
    if len(idx) != len(batch) or idx.min() < 0 or idx.max() >= model.output_dim:
        raise ValidationError("invalid label index")
    tr = trace_forward(model, batch)
    grads, _ = backprop(model, tr, _ce_delta(tr.output, idx))
    return grads


# optimizers -------------------------------------------------------------------

@dataclass
class OptimizerState:
    kind: str
    velocity: list[np.ndarray] | None = None
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None
    step: int = 0

    @classmethod
    def for_params(cls, kind: str, params: Sequence[np.ndarray]) -> "OptimizerState":
        zeros = lambda: [np.zeros_like(p, dtype=np.float64) for p in params]  # noqa: E731
        if kind == "sgd_momentum":
            return cls(kind, velocity=zeros())
        if kind == "adam":
            return cls(kind, m=zeros(), v=zeros())
        raise ValidationError(f"unknown optimizer {kind!r}")


def _check_shapes(params, grads, slots):
    if len(params) != len(grads) or len(params) != len(slots):
        raise ShapeError("parameter, gradient and state lists differ in length")
    for p, g, s in zip(params, grads, slots):
        if np.shape(p) != np.shape(g) or np.shape(p) != np.shape(s):
            raise ShapeError(f"shape mismatch {np.shape(p)} / {np.shape(g)} / {np.shape(s)}")


def sgd_momentum_step(params, grads, state: OptimizerState, lr: float, momentum: float):
    """``v <- momentum*v + g; p <- p - lr*v``, in place."""
    _check_shapes(params, grads, state.velocity)
    for p, g, v in zip(params, grads, state.velocity):
        v *= momentum
        v += g
        p -= lr * v
    state.step += 1
    return params, state


def adam_step(params, grads, state: OptimizerState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    _check_shapes(params, grads, state.m)
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


# training ---------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    minibatch_size: int = 20
    learning_rate: float = 0.1
    optimizer: str = "sgd_momentum"
    momentum: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    weight_scale: float = 1.0
    seed: int = 0
    normalize_inputs: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.minibatch_size < 1:
            raise ValidationError("minibatch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValidationError("momentum must lie in [0, 1)")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValidationError("adam betas must lie in (0, 1)")
        if not self.adam_epsilon > 0 or not self.weight_scale > 0:
            raise ValidationError("adam_epsilon and weight_scale must be positive")
        if self.optimizer not in ("sgd_momentum", "adam"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


def optimizer_update(params, grads, state: OptimizerState, config: TrainConfig) -> None:
    if config.optimizer == "adam":
        adam_step(params, grads, state, config.learning_rate,
                  config.adam_beta1, config.adam_beta2, config.adam_epsilon)
    else:
        sgd_momentum_step(params, grads, state, config.learning_rate, config.momentum)


def train(model: MlpModel | Sequence[LayerSpec], data: Dataset,
          config: TrainConfig) -> tuple[MlpModel, list[float]]:
    """Train a fresh copy of ``model``'s architecture on ``data``.

    Weights are re-initialised from ``config.seed``; the min-max input
    normalizer is fitted on the whole training set before the first epoch and
    frozen. Returns the trained model and the mean loss of every epoch.
    """
    layers = tuple(model.layers if isinstance(model, MlpModel) else model)
    threshold = model.threshold if isinstance(model, MlpModel) else 0.5
    if len(data) == 0:
        raise ValidationError("training dataset is empty")
    if layers[-1].activation != "softmax" or layers[-1].output_dim != 2:
        raise ValidationError("classifier training needs a 2-way softmax output layer")
    if data.dim != layers[0].input_dim:
        raise ShapeError(f"dataset has {data.dim} features, model expects {layers[0].input_dim}")

    rng = np.random.default_rng(config.seed)
    net = MlpModel.initialize(layers, rng, config.weight_scale, threshold)
    X = data.features.astype(np.float64)
    if not np.isfinite(X).all():
        raise ValidationError("training features contain non-finite values")
    if config.normalize_inputs:
        net.normalizer = Normalizer.fit_minmax(X)
        X = net.normalizer.apply(X)
    idx = data.labels - 1
    params = net.params()
    state = OptimizerState.for_params(config.optimizer, params)
    n, bs = len(data), config.minibatch_size
    history = []
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, bs):
                b = order[start:start + bs]
                tr = trace_forward(net, X[b], normalize=False)
                p_true = tr.output[np.arange(len(b)), idx[b]]
                total -= np.log(np.maximum(p_true, PROB_FLOOR)).sum()
                grads, _ = backprop(net, tr, _ce_delta(tr.output, idx[b]))
                optimizer_update(params, grads, state, config)
            loss = total / n
            if not np.isfinite(loss) or not all(np.isfinite(p).all() for p in params):
                raise TrainingDiverged(epoch)
            history.append(float(loss))
    return net, history


# inference --------------------------------------------------------------------

def predict_scores(model: MlpModel, X) -> np.ndarray:
    """Probability of label 2 for every row of ``X``."""
    if model.layers[-1].activation != "softmax" or model.output_dim != 2:
        raise ValidationError("scoring needs a 2-way softmax output layer")
    return np.atleast_2d(forward(model, np.atleast_2d(X)))[:, 1]


def labels_from_scores(scores, threshold: float = 0.5) -> np.ndarray:
    return np.where(np.asarray(scores) < threshold, 1, 2)


def predict_labels(model: MlpModel, X, threshold: float | None = None) -> np.ndarray:
    t = model.threshold if threshold is None else threshold
    return labels_from_scores(predict_scores(model, X), t)


def predict_with_score(model: MlpModel, x, threshold: float | None = None) -> tuple[int, float]:
    """(label, score) where score is the probability of label 2; ties go to label 2."""
    X = np.asarray(x, dtype=np.float64)
    if X.ndim != 1:
        raise ShapeError("predict_with_score takes a single input vector")
    score = float(predict_scores(model, X[None, :])[0])
    t = model.threshold if threshold is None else threshold
    return (1 if score < t else 2), score
