"""Tweet-style text cleaning, frequency vocabularies and word-count features.

Labels follow the service convention: 1 = subjective, 2 = objective.
"""

from __future__ import annotations

import json
import string
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ArtifactIOError, ShapeError, ValidationError

LABELS = (1, 2)
STOPWORDS_RESOURCE = "stopwords-v1.txt"

_PUNCT_TABLE = str.maketrans("", "", string.punctuation + "‘’“”…")


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    if path is None:
        text = resources.files("apiattack.data").joinpath(STOPWORDS_RESOURCE).read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    words = (line.strip().lower() for line in text.splitlines())
    return frozenset(w for w in words if w and not w.startswith("#"))


STOPWORDS = load_stopwords()


def _is_link(token: str) -> bool:
    return token.startswith("http") or "://" in token


def clean_text(raw: str, stopwords: Iterable[str] | None = None) -> list[str]:
    """Lowercase, drop links, strip punctuation and remove stop words."""
    stop = STOPWORDS if stopwords is None else {w.lower() for w in stopwords}
    tokens = []
    for tok in raw.lower().split():
        if _is_link(tok):
            continue
        tok = tok.translate(_PUNCT_TABLE)
        if tok and tok not in stop:
            tokens.append(tok)
    return tokens


def _ranked(counts: Counter) -> list[tuple[str, int]]:
    # descending count, ties lexicographically ascending
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


@dataclass(frozen=True)
class Vocabulary:
    words: tuple[str, ...]
    frequencies: tuple[int, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.words) != len(self.frequencies):
            raise ValidationError("words and frequencies differ in length")
        if len(set(self.words)) != len(self.words):
            raise ValidationError("vocabulary words must be unique")
        if any(a < b for a, b in zip(self.frequencies, self.frequencies[1:])):
            raise ValidationError("vocabulary frequencies must be non-increasing")
        object.__setattr__(self, "_index", {w: i for i, w in enumerate(self.words)})

    @property
    def k(self) -> int:
        return len(self.words)

    def index(self, word: str) -> int | None:
        return self._index.get(word)

    def to_text(self) -> str:
        return "".join(f"{w}\t{c}\n" for w, c in zip(self.words, self.frequencies))

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        words, freqs = [], []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                w, c = line.split("\t")
                words.append(w)
                freqs.append(int(c))
            except ValueError as exc:
                raise ValidationError(f"bad vocabulary line {lineno}: {line!r}") from exc
        return cls(tuple(words), tuple(freqs))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_text(_read_text(path))


def build_vocab(corpus: Iterable[Sequence[str]], k: int = 1000) -> Vocabulary:
    """Top-``k`` tokens of ``corpus`` by frequency."""
    if k < 1:
        raise ValidationError("k must be at least 1")
    counts = Counter(tok for doc in corpus for tok in doc)
    if len(counts) < k:
        raise ValidationError(
            f"corpus has {len(counts)} distinct tokens, {k - len(counts)} short of k={k}"
        )
    top = _ranked(counts)[:k]
    return Vocabulary(tuple(w for w, _ in top), tuple(c for _, c in top))


def featurize(tokens: Iterable[str], vocab: Vocabulary) -> np.ndarray:
    counts = np.zeros(vocab.k, dtype=np.int64)
    for tok in tokens:
        i = vocab.index(tok)
        if i is not None:
            counts[i] += 1
    return counts


def featurize_corpus(corpus: Sequence[Sequence[str]], vocab: Vocabulary) -> np.ndarray:
    if not corpus:
        return np.zeros((0, vocab.k), dtype=np.int64)
    return np.stack([featurize(doc, vocab) for doc in corpus])


def token_frequency_report(corpus: Iterable[Sequence[str]], top_n: int = 20) -> list[tuple[str, int]]:
    counts = Counter(tok for doc in corpus for tok in doc)
    if not counts:
        raise ValidationError("corpus is empty")
    return _ranked(counts)[:top_n]


def render_frequency_report(rows: Sequence[tuple[str, int]]) -> str:
    return "rank,word,count\n" + "".join(f"{i},{w},{c}\n" for i, (w, c) in enumerate(rows, 1))


@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray
    label: int
    synthetic: bool = False


@dataclass
class Dataset:
    """Feature matrix plus binary labels in {1, 2}."""

    features: np.ndarray
    labels: np.ndarray
    synthetic: np.ndarray | None = None
    vocabulary: Vocabulary | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.features.ndim != 2:
            if self.features.size == 0:
                self.features = self.features.reshape(0, 0)
            else:
                raise ShapeError("features must be a 2-D array (samples x features)")
        if len(self.features) != len(self.labels):
            raise ShapeError(
                f"{len(self.features)} feature rows but {len(self.labels)} labels"
            )
        if len(self.labels) and not np.isin(self.labels, LABELS).all():
            raise ValidationError("labels must be 1 or 2")
        if self.synthetic is None:
            self.synthetic = np.zeros(len(self.labels), dtype=bool)
        self.synthetic = np.asarray(self.synthetic, dtype=bool)

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[LabeledSample]:
        for x, y, s in zip(self.features, self.labels, self.synthetic):
            yield LabeledSample(x, int(y), bool(s))

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.synthetic[idx], self.vocabulary)

    def with_labels(self, labels) -> "Dataset":
        return Dataset(self.features, labels, self.synthetic, self.vocabulary)

    def class_counts(self) -> dict[int, int]:
        return {c: int((self.labels == c).sum()) for c in LABELS}

    @staticmethod
    def concat(*parts: "Dataset") -> "Dataset":
        parts = [p for p in parts if len(p)]
        if not parts:
            raise ValidationError("nothing to concatenate")
        dims = {p.dim for p in parts}
        if len(dims) != 1:
            raise ShapeError(f"feature dimensions differ: {sorted(dims)}")
        return Dataset(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.synthetic for p in parts]),
            parts[0].vocabulary,
        )

    def to_lines(self) -> str:
        out = []
        integral = np.issubdtype(self.features.dtype, np.integer)
        for x, y, s in zip(self.features, self.labels, self.synthetic):
            rec = {"counts": [int(v) for v in x] if integral else [float(v) for v in x],
                   "label": int(y)}
            if s:
                rec["synthetic"] = True
            out.append(json.dumps(rec, separators=(",", ":")))
        return "".join(line + "\n" for line in out)

    @classmethod
    def from_lines(cls, text: str) -> "Dataset":
        feats, labels, synth = [], [], []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                feats.append(rec["counts"])
                labels.append(int(rec["label"]))
                synth.append(bool(rec.get("synthetic", False)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValidationError(f"bad dataset record on line {lineno}") from exc
        if not feats:
            return cls(np.zeros((0, 0), dtype=np.int64), np.zeros(0, dtype=np.int64))
        try:
            arr = np.array(feats)
        except ValueError as exc:
            raise ShapeError("dataset records have differing lengths") from exc
        if arr.ndim != 2:
            raise ShapeError("dataset records have differing lengths")
        return cls(arr, labels, synth)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_lines(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Dataset":
        return cls.from_lines(_read_text(path))


def _read_text(path: str | Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ArtifactIOError(f"cannot read {path}: {exc.strerror or exc}") from exc


def read_corpus(path: str | Path) -> list[str]:
    """One document per line; blank lines are skipped."""
    return [line for line in _read_text(path).splitlines() if line.strip()]
