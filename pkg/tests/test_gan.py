import math

import numpy as np
import pytest

from apiattack import gan
from apiattack.errors import ValidationError
from apiattack.featurizer import Dataset
from apiattack.gan import FeatureScaler, GanConfig, GanPair

import helpers

TOY = GanConfig(noise_dim=4, generator_hidden=(8,), discriminator_hidden=(8,), epochs=30,
                batch_size=8, learning_rate=1e-3, seed=3)


def count_data(n=40, k=5, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 6, (n, k))
    return Dataset(X, np.where(X[:, 0] >= X[:, 1], 1, 2))


def test_defaults():
    c = GanConfig()
    assert (c.noise_dim, c.label_dim, c.generator_hidden, c.discriminator_hidden) == (100, 2, (100, 500), (500, 500))
    assert (c.epochs, c.batch_size, c.d_steps_per_g_step, c.learning_rate) == (500, 32, 2, 1e-5)


def test_config_rejects_zero_sizes():
    with pytest.raises(ValidationError):
        GanConfig(epochs=0)
    with pytest.raises(ValidationError):
        GanConfig(generator_hidden=(0,))


def test_value_at_equilibrium():
    assert gan.gan_value([0.5] * 3, [0.5] * 4) == pytest.approx(-2 * math.log(2), abs=1e-12)


def test_value_with_perfect_discriminator():
    assert gan.gan_value([1.0], [0.0]) == 0.0


def test_value_direct_evaluation():
    assert gan.gan_value([0.8], [0.3]) == pytest.approx(math.log(0.8) + math.log(0.7), abs=1e-12)


def test_generator_objective():
    assert gan.generator_objective([1.0, 1.0]) == 0.0
    assert gan.generator_objective([0.5]) == pytest.approx(-math.log(2), abs=1e-12)
    assert gan.generator_objective([0.25, 0.75]) == pytest.approx(
        (math.log(0.25) + math.log(0.75)) / 2, abs=1e-12)


def test_objectives_reject_empty_or_invalid_batches():
    with pytest.raises(ValidationError):
        gan.gan_value([], [0.5])
    with pytest.raises(ValidationError):
        gan.generator_objective([])
    with pytest.raises(ValidationError):
        gan.generator_objective([1.5])


def test_scaler_maps_into_unit_box_and_back():
    X = np.array([[0, 5], [4, 5], [2, 9]])
    s = FeatureScaler.fit(X)
    Y = s.forward(X)
    assert Y.min() >= -1 and Y.max() <= 1
    assert np.array_equal(s.inverse(Y), X)
    # tanh floor maps to the per-feature minimum
    assert s.inverse(-np.ones((1, 2))).tolist() == [[0, 5]]
    assert s.inverse(np.full((1, 2), 7.0)).tolist() == [[4, 9]]


def test_gan_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    for _ in range(3):
        da, dn, ga, gn = helpers.gan_case(rng)
        assert helpers.relative_errors(da, dn).max() <= 1e-4
        assert helpers.relative_errors(ga, gn).max() <= 1e-4


def test_training_is_deterministic():
    data = count_data()
    a = gan.train_gan(data, TOY)
    b = gan.train_gan(data, TOY)
    assert a.loss_history == b.loss_history
    assert len(a.loss_history) == TOY.epochs
    assert a.to_bytes() == b.to_bytes()


def test_training_needs_both_labels():
    d = count_data()
    with pytest.raises(ValidationError):
        gan.train_gan(d.subset(np.flatnonzero(d.labels == 1)), TOY)


def test_synthesize_contract():
    g = gan.train_gan(count_data(), TOY)
    s = gan.synthesize(g, 2, 5, seed=1)
    assert len(s) == 5 and (s.labels == 2).all() and s.synthetic.all()
    assert np.issubdtype(s.features.dtype, np.integer) and (s.features >= 0).all()
    assert np.array_equal(s.features, gan.synthesize(g, 2, 5, seed=1).features)
    assert len(gan.synthesize(g, 1, 0)) == 0


def test_synthesized_counts_stay_in_real_range():
    d = count_data()
    g = gan.train_gan(d, TOY)
    s = gan.synthesize(g, 1, 200, seed=0)
    assert (s.features >= d.features.min(0)).all() and (s.features <= d.features.max(0)).all()


def test_allocation_follows_label_frequencies():
    assert gan.allocate(100, {1: 61, 2: 39}) == {1: 61, 2: 39}
    assert gan.allocate(7, {1: 1, 2: 1}) == {1: 4, 2: 3}
    g = gan.train_gan(count_data(), TOY)
    s = gan.synthesize_dataset(g, 10, {1: 3, 2: 7}, seed=0)
    assert s.class_counts() == {1: 3, 2: 7}


def test_checkpoint_round_trip(tmp_path):
    g = gan.train_gan(count_data(), TOY)
    g.save(tmp_path / "g.ckpt")
    back = GanPair.load(tmp_path / "g.ckpt")
    assert back.to_bytes() == g.to_bytes()
    assert back.config == g.config
    assert np.array_equal(gan.synthesize(back, 1, 20).features, gan.synthesize(g, 1, 20).features)
    with pytest.raises(ValidationError):
        GanPair.from_bytes(b"CGAN" + b"\x00" * 3)
