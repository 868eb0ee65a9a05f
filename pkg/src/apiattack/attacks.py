"""The adversary: budgeted extraction, substitute tuning, GAN augmentation,
label-flip poisoning and low-confidence evasion sample selection."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import gan as gan_mod
from . import nn_core
from .errors import (ApiAttackError, OracleUnavailable, RateLimited, TrainingDiverged,
                     UnsupportedInThisMode, ValidationError)
from .featurizer import Dataset
from .metrics import DivergenceReport, divergence_from_labels
from .nn_core import LayerSpec, MlpModel, TrainConfig
from .oracle import TargetClassifier, train_mock_target

log = logging.getLogger(__name__)


# exploratory attack ---------------------------------------------------------------

@dataclass
class ExfiltrationResult:
    dataset: Dataset
    pool_indices: np.ndarray
    order: np.ndarray
    cursor: int
    status: str = "complete"  # complete | rate_limited | network_error
    detail: str = ""
    scores: np.ndarray | None = None

    @property
    def calls(self) -> int:
        return len(self.pool_indices)


def _pool_features(pool) -> np.ndarray:
    return pool.features if isinstance(pool, Dataset) else np.atleast_2d(np.asarray(pool))


def exploratory_attack(client, pool, budget: int, seed: int = 0, label_only: bool = True,
                       resume: ExfiltrationResult | None = None) -> ExfiltrationResult:
    """Query ``budget`` pool samples (seeded, without replacement) and keep the labels.

    Stops at the first rate-limit rejection or network failure and returns what
    it has; ``resume`` continues a partial run from its cursor.
    """
    X = _pool_features(pool)
    if len(X) == 0:
        raise ValidationError("query pool is empty")
    if budget < 1:
        raise ValidationError("budget must be >= 1")
    if len(X) < budget:
        raise ValidationError(f"pool holds {len(X)} samples, fewer than budget {budget}")
    if resume is None:
        order = np.random.default_rng(seed).choice(len(X), size=budget, replace=False)
        start, got_idx, got_lab, got_score = 0, [], [], []
    else:
        order, start = resume.order, resume.cursor
        got_idx = list(resume.pool_indices)
        got_lab = list(resume.dataset.labels)
        got_score = [] if resume.scores is None else list(resume.scores)

    status, detail, cursor = "complete", "", start
    for cursor in range(start, len(order)):
        i = int(order[cursor])
        try:
            resp = client.classify(X[i])
        except RateLimited as exc:
            status, detail = "rate_limited", f"retry after {exc.retry_after_seconds} s"
            break
        except OracleUnavailable as exc:
            status, detail = "network_error", str(exc)
            break
        got_idx.append(i)
        got_lab.append(resp.label)
        got_score.append(resp.score)
    else:
        cursor = len(order)

    idx = np.asarray(got_idx, dtype=np.int64)
    data = Dataset(X[idx], np.asarray(got_lab, dtype=np.int64))
    if status != "complete":
        log.warning("extraction stopped after %d calls: %s (%s)", len(idx), status, detail)
    return ExfiltrationResult(data, idx, order, cursor, status, detail,
                              None if label_only else np.asarray(got_score))


def label_with_oracle(client, features) -> np.ndarray:
    """Oracle labels for an evaluation set; any rejection propagates."""
    return np.array([client.classify(x).label for x in np.atleast_2d(features)], dtype=np.int64)


# substitute tuning ------------------------------------------------------------------

@dataclass(frozen=True)
class GridPoint:
    hidden_layers: int
    neurons_per_layer: int
    weight_scale: float = 1.0
    minibatch: int = 20
    momentum: float = 0.9

    def layers(self, input_dim: int, activation: str = "sigmoid") -> list[LayerSpec]:
        return nn_core.build_layers(input_dim, [self.neurons_per_layer] * self.hidden_layers,
                                    2, activation, "softmax")

    def config(self, base: TrainConfig) -> TrainConfig:
        return base.replace(weight_scale=self.weight_scale, minibatch_size=self.minibatch,
                            momentum=self.momentum)


# the two tuned outcomes reported for the full-data and the 100-sample attack
FULL_DATA_POINT = GridPoint(2, 30, 1.0, 20, 0.9)
LIMITED_DATA_POINT = GridPoint(3, 50, 3.0, 25, 0.1)


@dataclass
class SearchResult:
    point: GridPoint
    config: TrainConfig
    model: MlpModel
    d_max: float
    table: list[tuple[GridPoint, float | None, str]] = field(default_factory=list)


def split_train_validation(data: Dataset, train_fraction: float = 0.8,
                           seed: int = 0) -> tuple[Dataset, Dataset]:
    order = np.random.default_rng(seed).permutation(len(data))
    cut = int(round(train_fraction * len(data)))
    return data.subset(order[:cut]), data.subset(order[cut:])


class SearchFailed(TrainingDiverged):
    def __init__(self, failures: list[tuple[GridPoint, str]]):
        ApiAttackError.__init__(self, "every grid point failed: " +
                                "; ".join(f"{p}: {msg}" for p, msg in failures))
        self.epoch = -1
        self.failures = failures


def hyperparameter_search(train: Dataset, validation: Dataset, grid: Sequence[GridPoint],
                          base_config: TrainConfig = TrainConfig(), seed: int = 0) -> SearchResult:
    """Train one substitute per grid point; keep the one with the smallest
    validation d_max (first in grid order on ties)."""
    if not grid:
        raise ValidationError("hyperparameter grid is empty")
    counts = validation.class_counts()
    if not (counts[1] and counts[2]):
        raise ValidationError("validation labels must include both classes")
    table, best = [], None
    for point in grid:
        cfg = point.config(base_config).replace(seed=seed)
        try:
            model, _ = nn_core.train(point.layers(train.dim), train, cfg)
        except TrainingDiverged as exc:
            table.append((point, None, str(exc)))
            continue
        rep = divergence_from_labels(validation.labels,
                                     nn_core.predict_labels(model, validation.features))
        table.append((point, rep.d_max, ""))
        if best is None or rep.d_max < best.d_max:
            best = SearchResult(point, cfg, model, rep.d_max)
    if best is None:
        raise SearchFailed([(p, msg) for p, _, msg in table])
    best.table = table
    return best


# GAN augmentation -------------------------------------------------------------------

@dataclass
class AugmentResult:
    n_real: int
    n_synth: int
    model: MlpModel
    report: DivergenceReport
    training_set: Dataset


def augment_and_train(real: Dataset, n_s: int, gan_config: gan_mod.GanConfig,
                      train_config: TrainConfig, layers: Sequence[LayerSpec],
                      test_features, test_labels, gan: gan_mod.GanPair | None = None,
                      synth_seed: int | None = None) -> AugmentResult:
    """Train the substitute on ``real`` plus ``n_s`` GAN samples and score it
    against oracle labels of a held-out test set.

    ``gan`` lets a sweep reuse one trained GAN; with ``n_s == 0`` no GAN is
    touched and the result is the plain extraction substitute.
    """
    if len(real) == 0:
        raise ValidationError("no real training data")
    if n_s < 0:
        raise ValidationError("n_s must be >= 0")
    training = real
    if n_s:
        gan = gan or gan_mod.train_gan(real, gan_config)
        seed = gan_config.seed if synth_seed is None else synth_seed
        synth = gan_mod.synthesize_dataset(gan, n_s, real.class_counts(), seed=seed)
        training = Dataset.concat(real, synth)
    model, _ = nn_core.train(layers, training, train_config)
    report = divergence_from_labels(test_labels, nn_core.predict_labels(model, test_features))
    return AugmentResult(len(real), n_s, model, report, training)


def augmentation_sweep(real: Dataset, sizes: Sequence[int], gan_config: gan_mod.GanConfig,
                       train_config: TrainConfig, layers: Sequence[LayerSpec],
                       test_features, test_labels) -> tuple[list[AugmentResult], gan_mod.GanPair | None]:
    """One GAN, one substitute per augmentation size."""
    gan = gan_mod.train_gan(real, gan_config) if any(s > 0 for s in sizes) else None
    results = [augment_and_train(real, n_s, gan_config, train_config, layers,
                                 test_features, test_labels, gan=gan) for n_s in sizes]
    return results, gan


# causative attack ---------------------------------------------------------------------

@dataclass
class CausativeSelection:
    flip_indices: np.ndarray
    flipped_dataset: Dataset
    substitute_labels: np.ndarray
    scores: np.ndarray


def flip_counts(n: int, p: float) -> tuple[int, int]:
    """(top, bottom) sample counts for a p% budget: ceil and floor of (p/2)% of n."""
    share = Fraction(str(p)) / 200 * n
    return math.ceil(share), math.floor(share)


def _flip(labels: np.ndarray, indices) -> np.ndarray:
    out = labels.copy()
    out[indices] = 3 - out[indices]
    return out


def causative_select(substitute: MlpModel, candidates, p: float = 10.0) -> CausativeSelection:
    """Flip the substitute labels of the most confident samples at both ends of the score range."""
    X = _pool_features(candidates)
    if len(X) == 0:
        raise ValidationError("no candidate samples")
    if not 0 < p <= 100:
        raise ValidationError("p must lie in (0, 100]")
    n_top, n_bottom = flip_counts(len(X), p)
    if n_top + n_bottom == 0:
        raise ValidationError(f"p={p} selects no sample out of {len(X)}; "
                              f"use p >= {200 / len(X):.4g}")
    scores = nn_core.predict_scores(substitute, X)
    labels = nn_core.labels_from_scores(scores, substitute.threshold)
    idx = np.arange(len(X))
    top = np.lexsort((idx, -scores))[:n_top]
    rest = np.setdiff1d(idx, top)
    bottom = rest[np.lexsort((rest, scores[rest]))][:n_bottom]
    flip = np.sort(np.concatenate([top, bottom]))
    flipped = Dataset(X, _flip(labels, flip))
    return CausativeSelection(flip, flipped, labels, scores)


def random_flip_selection(substitute: MlpModel, candidates, count: int,
                          seed: int = 0) -> CausativeSelection:
    """Baseline: flip ``count`` substitute labels chosen uniformly at random."""
    X = _pool_features(candidates)
    scores = nn_core.predict_scores(substitute, X)
    labels = nn_core.labels_from_scores(scores, substitute.threshold)
    flip = np.sort(np.random.default_rng(seed).choice(len(X), size=count, replace=False))
    return CausativeSelection(flip, Dataset(X, _flip(labels, flip)), labels, scores)


def multiset_union(a: Dataset, b: Dataset) -> Dataset:
    """Records of ``a`` plus those of ``b`` beyond the multiplicity already in ``a``."""
    seen = Counter((tuple(x.tolist()), int(y)) for x, y in zip(a.features, a.labels))
    keep = []
    for i, (x, y) in enumerate(zip(b.features, b.labels)):
        key = (tuple(x.tolist()), int(y))
        if seen[key] > 0:
            seen[key] -= 1
        else:
            keep.append(i)
    return Dataset.concat(a, b.subset(keep)) if keep else a


def retrain_target(target: TargetClassifier, original: Dataset, poisoned: Dataset,
                   train_config: TrainConfig | None = None) -> TargetClassifier:
    return train_mock_target(multiset_union(original, poisoned), target.implementation,
                             train_config, threshold=target.threshold)


def evaluate_causative(target: TargetClassifier, original: Dataset, poisoned: Dataset,
                       eval_features, train_config: TrainConfig | None = None) -> DivergenceReport:
    """d(T, T~) where T~ is the mock target retrained with the poisoned records.

    Simulation only: needs white-box retraining access to our own mock target.
    """
    retrained = retrain_target(target, original, poisoned, train_config)
    X = np.atleast_2d(eval_features)
    return divergence_from_labels(target.predict(X), retrained.predict(X))


# evasion attack -------------------------------------------------------------------------

@dataclass(frozen=True)
class EvasionMode:
    kind: str = "max_error"  # max_error | targeted
    from_label: int | None = None
    to_label: int | None = None

    @classmethod
    def parse(cls, text: str) -> "EvasionMode":
        """``max_error`` or ``targeted:I->J``."""
        text = text.strip()
        if text == "max_error":
            return cls()
        if text.startswith("targeted:"):
            try:
                i, j = (int(v) for v in text.split(":", 1)[1].split("->"))
            except ValueError:
                raise ValidationError(f"bad evasion mode {text!r}") from None
            if {i, j} != {1, 2}:
                raise ValidationError("targeted mode needs labels 1->2 or 2->1")
            return cls("targeted", i, j)
        raise ValidationError(f"unknown evasion mode {text!r}")

    def __str__(self) -> str:
        return self.kind if self.kind == "max_error" else f"targeted:{self.from_label}->{self.to_label}"


@dataclass
class EvasionSelection:
    mode: EvasionMode
    indices: np.ndarray
    scores: np.ndarray
    threshold: float


def evasion_select(substitute: MlpModel, candidates, mode: EvasionMode | str = "max_error",
                   n: int = 10, threshold: float | None = None) -> EvasionSelection:
    """Pick the ``n`` candidates whose substitute score is closest to the threshold."""
    mode = EvasionMode.parse(mode) if isinstance(mode, str) else mode
    X = _pool_features(candidates)
    if n < 0 or n > len(X):
        raise ValidationError(f"cannot select {n} of {len(X)} candidates")
    t = substitute.threshold if threshold is None else threshold
    scores = nn_core.predict_scores(substitute, X)
    pool = np.arange(len(X))
    if mode.kind == "targeted":
        pool = pool[nn_core.labels_from_scores(scores, t) == mode.to_label]
        if len(pool) < n:
            raise ValidationError(f"only {len(pool)} candidates carry label {mode.to_label}, "
                                  f"{n} requested")
    gap = np.abs(scores[pool] - t)
    chosen = pool[np.lexsort((pool, gap))][:n]
    return EvasionSelection(mode, chosen, scores[chosen], t)


@dataclass
class EvasionReport:
    n: int
    selected_error: float | None
    baseline_error: float | None
    baseline_indices: np.ndarray

    def to_text(self) -> str:
        fmt = lambda v: "undefined" if v is None else repr(v)  # noqa: E731
        return (f"n={self.n}\nselected_error={fmt(self.selected_error)}\n"
                f"baseline_error={fmt(self.baseline_error)}\n")


def evaluate_evasion(target: TargetClassifier, candidates, ground_truth,
                     selection: EvasionSelection, seed: int = 0) -> EvasionReport:
    """Target misclassification rate on the selection vs. an equal-size random draw."""
    if ground_truth is None:
        raise UnsupportedInThisMode("evasion evaluation needs ground-truth labels "
                                    "(available only in simulation)")
    X = _pool_features(candidates)
    truth = np.asarray(ground_truth)
    n = len(selection.indices)
    rng = np.random.default_rng(seed)
    base = np.sort(rng.choice(len(X), size=n, replace=False))
    if n == 0:
        return EvasionReport(0, None, None, base)
    wrong = target.predict(X) != truth
    return EvasionReport(n, float(wrong[selection.indices].mean()), float(wrong[base].mean()), base)
