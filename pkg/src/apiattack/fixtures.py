"""Seeded fixture generators: a two-class tweet-like corpus and 2-D Gaussian sets.

The text generator stands in for live tweets. Every document mixes words that
lean towards its own class, words that lean towards the other class and
neutral filler, so a fraction of documents is genuinely ambiguous.
"""

from __future__ import annotations

import numpy as np

from .featurizer import Dataset

SUBJECTIVE_WORDS = """
love hate awesome terrible feel think amazing awful best worst happy sad
beautiful ugly favorite boring excited angry wish hope honestly totally
adore disgusting lovely hilarious annoying cute gorgeous horrible wonderful
brilliant stupid fun crazy sweet pathetic proud scared lol omg glad
""".split()

OBJECTIVE_WORDS = """
report percent city announced according data million government police
market officials county election meeting minister announces statement
company quarter council court billion update results published official
state department investigation launched released schedule agency shares
weather traffic forecast rate
""".split()

NEUTRAL_WORDS = """
today people time day new year week night game world home work school
music video phone car team life friends morning house news man woman
book movie show food coffee water town road street park season list
photo club store price plan group event place story part
""".split()

RARE_WORDS = [f"tok{i:03d}" for i in range(400)]

FILLER_STOPWORDS = "the a and of to in is it this that for on with at my you".split()

PUNCT = ["", "", "", "!", "!!", ".", ",", "?", "..."]


def _zipf(n: int, s: float = 0.9) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def generate_text_corpus(n_docs: int, seed: int = 0, label2_share: float = 0.5,
                         own_rate=(0.12, 0.45), cross_rate=(0.04, 0.25)):
    """Return ``n_docs`` (text, label) pairs; label 1 subjective, label 2 objective."""
    rng = np.random.default_rng(seed)
    lean = {1: SUBJECTIVE_WORDS, 2: OBJECTIVE_WORDS}
    lean_p = {1: _zipf(len(SUBJECTIVE_WORDS)), 2: _zipf(len(OBJECTIVE_WORDS))}
    neutral_p = _zipf(len(NEUTRAL_WORDS), 0.7)
    rare_p = _zipf(len(RARE_WORDS), 1.1)
    docs = []
    for _ in range(n_docs):
        label = 2 if rng.random() < label2_share else 1
        other = 3 - label
        own = rng.uniform(*own_rate)
        cross = rng.uniform(*cross_rate)
        length = 5 + rng.poisson(7)
        words = []
        for _ in range(length):
            u = rng.random()
            if u < own:
                w = lean[label][rng.choice(len(lean[label]), p=lean_p[label])]
            elif u < own + cross:
                w = lean[other][rng.choice(len(lean[other]), p=lean_p[other])]
            elif u < own + cross + 0.08:
                w = RARE_WORDS[rng.choice(len(RARE_WORDS), p=rare_p)]
            else:
                w = NEUTRAL_WORDS[rng.choice(len(NEUTRAL_WORDS), p=neutral_p)]
            if rng.random() < 0.1:
                w = w.upper() if rng.random() < 0.5 else w.capitalize()
            words.append(w + PUNCT[rng.integers(len(PUNCT))])
        for _ in range(rng.integers(0, 5)):
            pos = rng.integers(0, len(words) + 1)
            words.insert(pos, FILLER_STOPWORDS[rng.integers(len(FILLER_STOPWORDS))])
        if rng.random() < 0.3:
            words.append(f"https://t.co/{rng.integers(16**6):06x}")
        docs.append((" ".join(words), label))
    return docs


def gaussian_fixture(n_per_class: int = 100, seed: int = 0, separation: float = 4.0,
                     std: float = 1.0) -> Dataset:
    """Two isotropic 2-D Gaussian classes centred at +-separation/2 on the diagonal."""
    rng = np.random.default_rng(seed)
    c = separation / (2 * np.sqrt(2))
    x1 = rng.normal([-c, -c], std, (n_per_class, 2))
    x2 = rng.normal([c, c], std, (n_per_class, 2))
    X = np.vstack([x1, x2])
    y = np.repeat([1, 2], n_per_class)
    order = rng.permutation(len(y))
    return Dataset(X[order], y[order])
