"""Conditional GAN over count-feature vectors.

Both networks see the class label as a one-hot vector concatenated to their
input. Real features are min-max scaled into the generator's tanh range for
training and mapped back (clipped, rounded) when synthesizing.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn_core
from .errors import ArtifactIOError, TrainingDiverged, ValidationError
from .featurizer import Dataset
from .nn_core import MlpModel, OptimizerState

PROB_FLOOR = 1e-12
GAN_MAGIC = b"CGAN"
GAN_FORMAT_VERSION = 1


@dataclass(frozen=True)
class GanConfig:
    noise_dim: int = 100
    label_dim: int = 2
    generator_hidden: tuple[int, ...] = (100, 500)
    discriminator_hidden: tuple[int, ...] = (500, 500)
    epochs: int = 500
    batch_size: int = 32
    d_steps_per_g_step: int = 2
    learning_rate: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "generator_hidden", tuple(self.generator_hidden))
        object.__setattr__(self, "discriminator_hidden", tuple(self.discriminator_hidden))
        counts = [self.noise_dim, self.label_dim, self.epochs, self.batch_size,
                  self.d_steps_per_g_step, *self.generator_hidden, *self.discriminator_hidden]
        if min(counts) < 1:
            raise ValidationError("GAN sizes, epochs and step counts must all be >= 1")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")


@dataclass
class FeatureScaler:
    minimum: np.ndarray
    maximum: np.ndarray

    @classmethod
    def fit(cls, X) -> "FeatureScaler":
        X = np.asarray(X, dtype=np.float64)
        return cls(X.min(axis=0), X.max(axis=0))

    @property
    def _span(self):
        span = self.maximum - self.minimum
        return np.where(span > 0, span, 1.0)

    def forward(self, X) -> np.ndarray:
        return 2.0 * (np.asarray(X, dtype=np.float64) - self.minimum) / self._span - 1.0

    def inverse(self, Y, discrete: bool = True) -> np.ndarray:
        """Back to feature space, clipped to the fitted range.

        With ``discrete`` (count features) values are also rounded to
        nonnegative integers.
        """
        raw = (np.asarray(Y, dtype=np.float64) + 1.0) * 0.5 * self._span + self.minimum
        raw = np.clip(raw, self.minimum, self.maximum)
        if not discrete:
            return raw
        return np.maximum(np.rint(raw), 0).astype(np.int64)


@dataclass
class GanPair:
    generator: MlpModel
    discriminator: MlpModel
    scaler: FeatureScaler
    config: GanConfig
    loss_history: list[tuple[float, float]] = field(default_factory=list)

    @property
    def feature_dim(self) -> int:
        return self.generator.output_dim

    def to_bytes(self) -> bytes:
        header = json.dumps({"format_version": GAN_FORMAT_VERSION, "config": asdict(self.config),
                             "feature_dim": self.feature_dim},
                            sort_keys=True, separators=(",", ":")).encode("utf-8")
        g, d = self.generator.to_bytes(), self.discriminator.to_bytes()
        return b"".join([
            GAN_MAGIC, struct.pack("<I", len(header)), header,
            struct.pack("<Q", len(g)), g, struct.pack("<Q", len(d)), d,
            self.scaler.minimum.astype("<f8").tobytes(),
            self.scaler.maximum.astype("<f8").tobytes(),
        ])

    @classmethod
    def from_bytes(cls, data: bytes) -> "GanPair":
        if data[:4] != GAN_MAGIC:
            raise ValidationError("not a GAN checkpoint (bad magic)")
        try:
            (hlen,) = struct.unpack_from("<I", data, 4)
            pos = 8 + hlen
            header = json.loads(data[8:pos].decode("utf-8"))
            (glen,) = struct.unpack_from("<Q", data, pos)
            gen = MlpModel.from_bytes(data[pos + 8:pos + 8 + glen])
            pos += 8 + glen
            (dlen,) = struct.unpack_from("<Q", data, pos)
            disc = MlpModel.from_bytes(data[pos + 8:pos + 8 + dlen])
            pos += 8 + dlen
            k = header["feature_dim"]
            rest = np.frombuffer(data, dtype="<f8", offset=pos).astype(np.float64)
        except (struct.error, KeyError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"corrupt GAN checkpoint: {exc}") from exc
        if rest.size != 2 * k:
            raise ValidationError("corrupt GAN checkpoint: scaler size mismatch")
        return cls(gen, disc, FeatureScaler(rest[:k].copy(), rest[k:].copy()),
                   GanConfig(**header["config"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "GanPair":
        try:
            return cls.from_bytes(Path(path).read_bytes())
        except OSError as exc:
            raise ArtifactIOError(f"cannot read GAN checkpoint {path}: {exc}") from exc


def _check_probs(p, what):
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise ValidationError(f"{what} batch is empty")
    if ((p < 0) | (p > 1)).any() or not np.isfinite(p).all():
        raise ValidationError(f"{what} discriminator outputs must lie in [0, 1]")
    return p


def _safe_log(p):
    return np.log(np.maximum(p, PROB_FLOOR))


def gan_value(discriminator_outputs_real, discriminator_outputs_fake) -> float:
    """Empirical minimax value: mean log D(x) + mean log(1 - D(G(z)))."""
    real = _check_probs(discriminator_outputs_real, "real")
    fake = _check_probs(discriminator_outputs_fake, "fake")
    return float(_safe_log(real).mean() + _safe_log(1.0 - fake).mean())


def generator_objective(discriminator_outputs_fake) -> float:
    """Non-saturating generator objective mean log D(G(z)), to be maximized."""
    fake = _check_probs(discriminator_outputs_fake, "fake")
    return float(_safe_log(fake).mean())


def one_hot(labels, label_dim: int = 2) -> np.ndarray:
    idx = np.asarray(labels, dtype=np.int64) - 1
    out = np.zeros((len(idx), label_dim))
    out[np.arange(len(idx)), idx] = 1.0
    return out


def build_pair_models(feature_dim: int, config: GanConfig, rng: np.random.Generator):
    g_layers = nn_core.build_layers(config.noise_dim + config.label_dim, config.generator_hidden,
                                    feature_dim, "relu", "tanh")
    d_layers = nn_core.build_layers(feature_dim + config.label_dim, config.discriminator_hidden,
                                    1, "relu", "sigmoid")
    return MlpModel.initialize(g_layers, rng), MlpModel.initialize(d_layers, rng)


def generate(generator: MlpModel, z: np.ndarray, y_onehot: np.ndarray) -> np.ndarray:
    return nn_core.trace_forward(generator, np.hstack([z, y_onehot])).output


def discriminator_gradients(disc: MlpModel, real, fake, y_real, y_fake):
    """Loss -(mean log D(x,y) + mean log(1 - D(G(z,y),y))) and its parameter gradients."""
    X = np.vstack([np.hstack([real, y_real]), np.hstack([fake, y_fake])])
    tr = nn_core.trace_forward(disc, X)
    D = tr.output[:, 0]
    nr, nf = len(real), len(fake)
    target = np.concatenate([np.ones(nr), np.zeros(nf)])
    weight = np.concatenate([np.full(nr, 1.0 / nr), np.full(nf, 1.0 / nf)])
    # d/dlogit of -log D is D-1, of -log(1-D) is D
    grads, _ = nn_core.backprop(disc, tr, ((D - target) * weight)[:, None])
    return -gan_value(D[:nr], D[nr:]), grads


def generator_gradients(gen: MlpModel, disc: MlpModel, z, y_onehot):
    """Loss -mean log D(G(z,y),y) and its gradients w.r.t. generator parameters.

    The discriminator is held fixed; gradients flow through it into G.
    """
    g_tr = nn_core.trace_forward(gen, np.hstack([z, y_onehot]))
    fake = g_tr.output
    d_tr = nn_core.trace_forward(disc, np.hstack([fake, y_onehot]))
    D = d_tr.output[:, 0]
    n = len(z)
    _, grad_in = nn_core.backprop(disc, d_tr, ((D - 1.0) / n)[:, None])
    grad_fake = grad_in[:, :fake.shape[1]]
    delta = nn_core.activation_delta(gen.layers[-1].activation, g_tr.pre[-1], fake, grad_fake)
    grads, _ = nn_core.backprop(gen, g_tr, delta)
    return -generator_objective(D), grads


def train_gan(real: Dataset, config: GanConfig = GanConfig()) -> GanPair:
    """Train a conditional GAN; each epoch runs ``d_steps_per_g_step`` discriminator
    minibatch updates followed by one generator minibatch update (Adam on both)."""
    if len(real) == 0 or real.dim < 1:
        raise ValidationError("GAN training needs a nonempty dataset with >= 1 feature")
    present = [c for c, n in real.class_counts().items() if n]
    if len(present) < 2:
        raise ValidationError(f"GAN training data holds only label(s) {present}")
    if config.label_dim != 2:
        raise ValidationError("only binary labels are supported")

    rng = np.random.default_rng(config.seed)
    scaler = FeatureScaler.fit(real.features)
    Xs = scaler.forward(real.features)
    Y = one_hot(real.labels)
    label_p = np.array([real.class_counts()[1], real.class_counts()[2]], dtype=np.float64)
    label_p /= label_p.sum()

    gen, disc = build_pair_models(real.dim, config, rng)
    g_params, d_params = gen.params(), disc.params()
    g_state = OptimizerState.for_params("adam", g_params)
    d_state = OptimizerState.for_params("adam", d_params)
    adam = (config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon)
    n, bs = len(real), min(config.batch_size, len(real))
    history: list[tuple[float, float]] = []

    for epoch in range(1, config.epochs + 1):
        d_loss = 0.0
        for _ in range(config.d_steps_per_g_step):
            b = rng.choice(n, size=bs, replace=False)
            z = rng.standard_normal((bs, config.noise_dim))
            y_fake = Y[b]
            fake = generate(gen, z, y_fake)
            d_loss, grads = discriminator_gradients(disc, Xs[b], fake, Y[b], y_fake)
            nn_core.adam_step(d_params, grads, d_state, *adam)
        z = rng.standard_normal((bs, config.noise_dim))
        y = one_hot(rng.choice((1, 2), size=bs, p=label_p))
        g_loss, grads = generator_gradients(gen, disc, z, y)
        nn_core.adam_step(g_params, grads, g_state, *adam)
        if not (np.isfinite(d_loss) and np.isfinite(g_loss)):
            raise TrainingDiverged(epoch)
        history.append((float(d_loss), float(g_loss)))

    return GanPair(gen, disc, scaler, config, history)


def synthesize(gan: GanPair, label: int, n: int, seed: int = 0, discrete: bool = True) -> Dataset:
    """``n`` synthetic count vectors conditioned on (and labelled with) ``label``.

    Pass ``discrete=False`` for real-valued features to skip integer rounding.
    """
    if label not in (1, 2):
        raise ValidationError("label must be 1 or 2")
    if n < 0:
        raise ValidationError("n must be >= 0")
    k = gan.feature_dim
    if n == 0:
        return Dataset(np.zeros((0, k), dtype=np.int64), np.zeros(0, dtype=np.int64))
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, gan.config.noise_dim))
    out = generate(gan.generator, z, one_hot(np.full(n, label)))
    counts = gan.scaler.inverse(out, discrete)
    return Dataset(counts, np.full(n, label), np.ones(n, dtype=bool))


def allocate(n_total: int, class_counts: dict[int, int]) -> dict[int, int]:
    """Split ``n_total`` proportionally to real label frequencies; remainder to label 1."""
    total = class_counts[1] + class_counts[2]
    n2 = n_total * class_counts[2] // total
    return {1: n_total - n2, 2: n2}


def synthesize_dataset(gan: GanPair, n_total: int, class_counts: dict[int, int],
                       seed: int = 0) -> Dataset:
    share = allocate(n_total, class_counts)
    parts = [synthesize(gan, 1, share[1], seed), synthesize(gan, 2, share[2], seed + 1)]
    k = gan.feature_dim
    parts = [p for p in parts if len(p)]
    if not parts:
        return Dataset(np.zeros((0, k), dtype=np.int64), np.zeros(0, dtype=np.int64))
    return Dataset.concat(*parts)
