"""Sparse context features for token classification.

A fixed subset of the usual NER template family: windowed word forms,
word shapes, affixes, the previous predicted tag and optional word-cluster
path prefixes.
"""
from __future__ import annotations

import re
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

BOS = "<s>"
EOS = "</s>"
CLUSTER_PREFIXES = (4, 6, 10)


@lru_cache(maxsize=200_000)
def word_shape(word: str) -> str:
    """Map capitals to X, lowercase to x, digits to d and collapse runs."""
    out = []
    for ch in word:
        if ch.isupper():
            c = "X"
        elif ch.islower():
            c = "x"
        elif ch.isdigit():
            c = "d"
        else:
            c = ch
        if not out or out[-1] != c:
            out.append(c)
    return "".join(out)


def _form(words: Sequence[str], j: int) -> str:
    if j < 0:
        return BOS
    if j >= len(words):
        return EOS
    return words[j].lower()


def _shape(words: Sequence[str], j: int) -> str:
    if j < 0:
        return BOS
    if j >= len(words):
        return EOS
    return word_shape(words[j])


def static_features(words: Sequence[str], i: int,
                    clusters: Mapping[str, str] | None = None) -> list[str]:
    """All features of position ``i`` that do not depend on predicted tags."""
    if not 0 <= i < len(words):
        raise IndexError(f"position {i} outside sentence of length {len(words)}")
    feats = ["bias"]
    for off in (-2, -1, 0, 1, 2):
        feats.append(f"w[{off}]={_form(words, i + off)}")
    for off in (-1, 0, 1):
        feats.append(f"shape[{off}]={_shape(words, i + off)}")
    low = words[i].lower()
    for n in (1, 2, 3):
        if len(low) >= n:
            feats.append(f"pre{n}={low[:n]}")
            feats.append(f"suf{n}={low[-n:]}")
    if clusters:
        path = clusters.get(words[i])
        if path is not None:
            for n in CLUSTER_PREFIXES:
                if len(path) >= n:
                    feats.append(f"cl{n}={path[:n]}")
            feats.append(f"cl={path}")
    return feats


@lru_cache(maxsize=50_000)
def _cached_sentence_features(words: tuple[str, ...]) -> tuple[tuple[str, ...], ...]:
    return tuple(tuple(static_features(words, i)) for i in range(len(words)))


def sentence_features(words: Sequence[str],
                      clusters: Mapping[str, str] | None = None) -> Sequence[Sequence[str]]:
    """Static features for every position of a sentence."""
    if clusters:
        return [static_features(words, i, clusters) for i in range(len(words))]
    return _cached_sentence_features(tuple(words))


def prev_tag_feature(prev_tag: str | None) -> str:
    return f"prev={BOS if prev_tag is None else prev_tag}"


def extract_features(words: Sequence[str], i: int, prev_tag: str | None,
                     clusters: Mapping[str, str] | None = None) -> list[str]:
    return static_features(words, i, clusters) + [prev_tag_feature(prev_tag)]


def read_clusters(path) -> dict[str, str]:
    """Read ``surface<TAB>bitpath`` lines into a dict."""
    clusters = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 2 or not re.fullmatch(r"[01]+", parts[1]):
                raise ValueError(f"line {lineno}: expected surface<TAB>bitpath, got {line!r}")
            clusters[parts[0]] = parts[1]
    return clusters


class FeatureIndexer:
    """Interns feature strings to column indices.

    ``fit`` freezes the vocabulary; features unseen at fit time are dropped
    when transforming new data.
    """

    def __init__(self, clusters: Mapping[str, str] | None = None):
        self.clusters = clusters
        self.vocab: dict[str, int] = {}

    def fit(self, X: Sequence[Sequence[str]], extra: Sequence[str] = ()) -> "FeatureIndexer":
        self.fit_index(X, extra)
        return self

    def fit_index(self, X: Sequence[Sequence[str]], extra: Sequence[str] = ()) -> list[list[np.ndarray]]:
        """Build the vocabulary from ``X`` and return its index arrays."""
        vocab: dict[str, int] = {}
        out = []
        for words in X:
            rows = []
            for feats in sentence_features(words, self.clusters):
                rows.append(np.array(sorted({vocab.setdefault(f, len(vocab)) for f in feats}),
                                     dtype=np.int64))
            out.append(rows)
        for f in extra:
            vocab.setdefault(f, len(vocab))
        self.vocab = vocab
        return out

    def __len__(self) -> int:
        return len(self.vocab)

    def index(self, words: Sequence[str]) -> list[np.ndarray]:
        """Per-token arrays of active static feature indices."""
        vocab = self.vocab
        out = []
        for feats in sentence_features(words, self.clusters):
            ids = {vocab[f] for f in feats if f in vocab}
            out.append(np.array(sorted(ids), dtype=np.int64))
        return out

    def matrix(self, words: Sequence[str]) -> sp.csr_matrix:
        """Binary token-by-feature matrix for one sentence."""
        rows = self.index(words)
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(r) for r in rows])
        indices = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        data = np.ones(len(indices))
        return sp.csr_matrix((data, indices, indptr), shape=(len(rows), len(self.vocab)))
