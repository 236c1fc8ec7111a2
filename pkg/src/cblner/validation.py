"""Input checks shared by the sequence estimators.

Sequence data follows one convention throughout: ``X`` is a list of
sentences (each a list of token strings), ``y`` a parallel list of label
lists, and ``sample_weight`` a parallel list of per-token weight arrays.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np


def check_sequences(X, y=None, allow_missing_labels: bool = False):
    """Validate ragged sequence inputs and return them as lists."""
    if isinstance(X, np.ndarray) and X.dtype != object:
        raise TypeError("X must be a sequence of token sequences, not a numeric array")
    X = [list(words) for words in X]
    for k, words in enumerate(X):
        if any(not isinstance(w, str) or not w for w in words):
            raise ValueError(f"sentence {k} contains a non-string or empty token")
    if y is None:
        return X
    y = [list(tags) for tags in y]
    if len(X) != len(y):
        raise ValueError(f"X has {len(X)} sentences but y has {len(y)}")
    for k, (words, tags) in enumerate(zip(X, y)):
        if len(words) != len(tags):
            raise ValueError(f"sentence {k}: {len(words)} tokens but {len(tags)} labels")
        if not allow_missing_labels and any(t is None for t in tags):
            raise ValueError(f"sentence {k} has missing labels")
    return X, y


def check_sample_weight(sample_weight, X: Sequence[Sequence[str]]) -> list[np.ndarray]:
    """Return per-sentence float arrays; ``None`` means all ones."""
    if sample_weight is None:
        return [np.ones(len(words)) for words in X]
    if len(sample_weight) != len(X):
        raise ValueError(f"sample_weight has {len(sample_weight)} rows but X has {len(X)}")
    out = []
    for k, (w, words) in enumerate(zip(sample_weight, X)):
        w = np.asarray(w, dtype=float)
        if w.shape != (len(words),):
            raise ValueError(f"sentence {k}: weight shape {w.shape} != ({len(words)},)")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError(f"sentence {k}: weights must be finite and nonnegative")
        out.append(w)
    return out


def unique_labels(y, first: str | None = "O") -> list[str]:
    labels = sorted({t for tags in y for t in tags if t is not None})
    if first is not None:
        if first in labels:
            labels.remove(first)
        labels.insert(0, first)
    return labels


def flatten(rows: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(r) for r in rows]) if len(rows) else np.zeros(0)


def unflatten(flat: np.ndarray, lengths: Sequence[int]) -> list[np.ndarray]:
    return np.split(np.asarray(flat), np.cumsum(lengths)[:-1]) if len(lengths) else []
