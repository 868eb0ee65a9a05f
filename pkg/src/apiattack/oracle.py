"""The black-box target: mock classifiers, the per-window query budget, and classify()."""

from __future__ import annotations

import json
import math
import struct
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import nn_core
from .errors import ArtifactIOError, RateLimited, ShapeError, ValidationError
from .featurizer import Dataset
from .nn_core import MlpModel, TrainConfig

NB_MAGIC = b"TGNB"
NB_FORMAT_VERSION = 1
DEFAULT_LIMIT = 1000
DEFAULT_WINDOW = 86400.0


@dataclass(frozen=True)
class NaiveBayesParams:
    log_prior: np.ndarray       # (2,)
    log_likelihood: np.ndarray  # (2, k)

    @property
    def dim(self) -> int:
        return self.log_likelihood.shape[1]


def fit_naive_bayes(data: Dataset) -> NaiveBayesParams:
    """Multinomial naive Bayes with add-one smoothing over count features."""
    X = data.features.astype(np.float64)
    k = X.shape[1]
    log_prior = np.empty(2)
    log_lik = np.empty((2, k))
    for c in (1, 2):
        rows = X[data.labels == c]
        counts = rows.sum(axis=0)
        log_prior[c - 1] = math.log(len(rows) / len(X))
        log_lik[c - 1] = np.log((counts + 1.0) / (counts.sum() + k))
    return NaiveBayesParams(log_prior, log_lik)


@dataclass(frozen=True)
class TargetClassifier:
    """A frozen classifier behind the black-box interface.

    ``scores`` gives the probability of label 2; labels follow the same
    threshold rule as the substitute (score < threshold means label 1).
    """

    implementation: str
    nb: NaiveBayesParams | None = None
    mlp: MlpModel | None = None
    threshold: float = 0.5

    @property
    def dim(self) -> int:
        return self.nb.dim if self.implementation == "naive_bayes" else self.mlp.input_dim

    def scores(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise ShapeError(f"expected {self.dim} features, got {X.shape[1]}")
        if self.implementation == "naive_bayes":
            joint = X @ self.nb.log_likelihood.T + self.nb.log_prior
            # P(label 2) = 1 / (1 + exp(log p1 - log p2))
            return 0.5 * (1.0 + np.tanh(0.5 * (joint[:, 1] - joint[:, 0])))
        return nn_core.predict_scores(self.mlp, X)

    def predict(self, X) -> np.ndarray:
        return nn_core.labels_from_scores(self.scores(X), self.threshold)

    def __call__(self, X) -> np.ndarray:
        return self.predict(X)

    # serialization ---------------------------------------------------------
    def to_bytes(self) -> bytes:
        if self.implementation == "mlp":
            model = self.mlp.copy()
            model.threshold = self.threshold
            return model.to_bytes()
        header = json.dumps({"format_version": NB_FORMAT_VERSION, "implementation": "naive_bayes",
                             "dim": self.dim, "threshold": float(self.threshold)},
                            sort_keys=True, separators=(",", ":")).encode("utf-8")
        return b"".join([NB_MAGIC, struct.pack("<I", len(header)), header,
                         self.nb.log_prior.astype("<f8").tobytes(),
                         np.ascontiguousarray(self.nb.log_likelihood, dtype="<f8").tobytes()])

    @classmethod
    def from_bytes(cls, data: bytes) -> "TargetClassifier":
        if data[:4] == nn_core.MODEL_MAGIC:
            model = MlpModel.from_bytes(data)
            return cls("mlp", mlp=model, threshold=model.threshold)
        if data[:4] != NB_MAGIC:
            raise ValidationError("not a target model file (bad magic)")
        try:
            (hlen,) = struct.unpack_from("<I", data, 4)
            header = json.loads(data[8:8 + hlen].decode("utf-8"))
            k = header["dim"]
            body = np.frombuffer(data, dtype="<f8", offset=8 + hlen).astype(np.float64)
        except (struct.error, KeyError, ValueError) as exc:
            raise ValidationError(f"corrupt target file: {exc}") from exc
        if header.get("format_version") != NB_FORMAT_VERSION or body.size != 2 + 2 * k:
            raise ValidationError("corrupt or unsupported naive Bayes target file")
        nb = NaiveBayesParams(body[:2].copy(), body[2:].reshape(2, k).copy())
        return cls("naive_bayes", nb=nb, threshold=header["threshold"])

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "TargetClassifier":
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise ArtifactIOError(f"cannot read target {path}: {exc.strerror or exc}") from exc
        return cls.from_bytes(data)


# hidden layout of the mlp mock target: 2 x 30 sigmoid
MLP_TARGET_HIDDEN = (30, 30)
MLP_TARGET_CONFIG = TrainConfig(epochs=30, minibatch_size=20, learning_rate=0.1, momentum=0.9)


def train_mock_target(data: Dataset, implementation: str = "naive_bayes",
                      train_config: TrainConfig | None = None,
                      threshold: float = 0.5) -> TargetClassifier:
    if len(data) == 0:
        raise ValidationError("cannot train a target on an empty dataset")
    present = {c for c, n in data.class_counts().items() if n}
    if present != {1, 2}:
        raise ValidationError(f"target training data holds only label(s) {sorted(present)}")
    if implementation == "naive_bayes":
        return TargetClassifier("naive_bayes", nb=fit_naive_bayes(data), threshold=threshold)
    if implementation == "mlp":
        layers = nn_core.build_layers(data.dim, MLP_TARGET_HIDDEN, 2)
        model, _ = nn_core.train(layers, data, train_config or MLP_TARGET_CONFIG)
        model.threshold = threshold
        return TargetClassifier("mlp", mlp=model, threshold=threshold)
    raise ValidationError(f"unknown target implementation {implementation!r}")


class QueryBudget:
    """Fixed-window call counter: at most ``limit`` allowed calls per ``window`` seconds.

    Thread-safe; ``clock`` is injectable so tests can move time by hand.
    """

    def __init__(self, limit: int = DEFAULT_LIMIT, window: float = DEFAULT_WINDOW,
                 clock: Callable[[], float] = time.monotonic):
        if limit < 0 or window <= 0:
            raise ValidationError("limit must be >= 0 and window > 0")
        self.limit = int(limit)
        self.window = float(window)
        self.clock = clock
        self.consumed = 0
        self.window_start = clock()
        self._lock = threading.Lock()

    def _roll(self, now: float) -> None:
        if now >= self.window_start + self.window:
            elapsed = math.floor((now - self.window_start) / self.window)
            self.window_start += elapsed * self.window
            self.consumed = 0

    def try_consume(self, now: float | None = None) -> int | None:
        """Consume one call; returns the calls left in the window, or None if denied."""
        with self._lock:
            now = self.clock() if now is None else now
            self._roll(now)
            if self.consumed < self.limit:
                self.consumed += 1
                return self.limit - self.consumed
            return None

    def check_and_consume(self, now: float | None = None) -> bool:
        return self.try_consume(now) is not None

    def remaining(self, now: float | None = None) -> int:
        with self._lock:
            self._roll(self.clock() if now is None else now)
            return self.limit - self.consumed

    def retry_after(self, now: float | None = None) -> int:
        with self._lock:
            now = self.clock() if now is None else now
            self._roll(now)
            return max(1, math.ceil(self.window_start + self.window - now))


@dataclass(frozen=True)
class ClassifyResponse:
    label: int
    score: float
    remaining_budget: int


def validate_features(target: TargetClassifier, features) -> np.ndarray:
    x = np.asarray(features)
    if x.ndim != 1 or len(x) != target.dim:
        raise ShapeError(f"expected {target.dim} counts, got shape {x.shape}")
    if not np.isfinite(x.astype(np.float64)).all():
        raise ValidationError("features must be finite")
    return x


def classify(target: TargetClassifier, budget: QueryBudget, features) -> ClassifyResponse:
    """One metered query. Raises RateLimited when the window's budget is spent."""
    x = validate_features(target, features)
    remaining = budget.try_consume()
    if remaining is None:
        raise RateLimited(budget.retry_after(), remaining=0)
    score = float(target.scores(x[None, :])[0])
    label = 1 if score < target.threshold else 2
    return ClassifyResponse(label, score, remaining)
