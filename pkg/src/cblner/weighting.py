"""Knowledge-based initial instance weights over the default-negative tokens.

Weight vectors are lists of float arrays, one per sentence. Tokens carrying
an annotated entity tag always get weight 1.
"""
from __future__ import annotations

import math
from collections import Counter
from typing import Mapping

import numpy as np

from .corpus import Corpus, PartialAnnotation, as_partial

SCHEMES = ("raw", "freq", "window", "combined")


def raw_weights(pa: Corpus | PartialAnnotation) -> list[np.ndarray]:
    pa = as_partial(pa)
    return [np.ones(len(s)) for s in pa.corpus]


def token_counts(corpus: Corpus) -> Counter:
    return Counter(w for s in corpus for w in s.words)


def read_counts(path) -> Counter:
    """Read ``surface<TAB>count`` lines, e.g. counts from a larger corpus."""
    counts = Counter()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[1].isdigit():
                raise ValueError(f"line {lineno}: expected surface<TAB>count, got {line!r}")
            counts[parts[0]] += int(parts[1])
    return counts


def freq_weights(pa: Corpus | PartialAnnotation, log_scale: bool = False,
                 counts: Mapping[str, int] | None = None) -> list[np.ndarray]:
    """Weight each negative token by its surface frequency relative to the most
    frequent surface. Counts default to the corpus itself (P and N together)."""
    pa = as_partial(pa)
    counts = token_counts(pa.corpus) if counts is None else counts
    max_count = max(counts.values(), default=0)
    if max_count <= 0:
        raise ValueError("frequency counts are empty")

    if log_scale:
        denom = math.log1p(max_count)

        def scale(c):
            return math.log1p(c) / denom
    else:
        def scale(c):
            return c / max_count

    out = []
    for sent, mask in zip(pa.corpus, pa.p_mask):
        v = np.array([min(1.0, scale(counts.get(w, 0))) for w in sent.words])
        v[mask] = 1.0
        out.append(v)
    return out


def entity_distance(mask: np.ndarray) -> np.ndarray:
    """Distance from each position to the nearest True in ``mask`` (inf if none)."""
    n = len(mask)
    d = np.full(n, np.inf)
    pos = np.flatnonzero(mask)
    if len(pos):
        idx = np.arange(n)
        d = np.abs(idx[:, None] - pos[None, :]).min(axis=1).astype(float)
    return d


def window_weights(pa: Corpus | PartialAnnotation) -> list[np.ndarray]:
    pa = as_partial(pa)
    return [(entity_distance(mask) <= 1).astype(float) for mask in pa.p_mask]


def combined_weights(pa: Corpus | PartialAnnotation, log_scale: bool = False,
                     counts: Mapping[str, int] | None = None) -> list[np.ndarray]:
    pa = as_partial(pa)
    freq = freq_weights(pa, log_scale, counts)
    return [np.where(entity_distance(mask) <= 1, 1.0, f) for mask, f in zip(pa.p_mask, freq)]


def default_log_scale(model: str) -> bool:
    """Log-scaled frequencies for the CRF, whose training suffers under Zipfian weights."""
    return model == "crf"


def initial_weights(pa: Corpus | PartialAnnotation, scheme: str = "raw", log_scale: bool = False,
                    counts: Mapping[str, int] | None = None) -> list[np.ndarray]:
    if scheme == "raw":
        return raw_weights(pa)
    if scheme == "freq":
        return freq_weights(pa, log_scale, counts)
    if scheme == "window":
        return window_weights(pa)
    if scheme == "combined":
        return combined_weights(pa, log_scale, counts)
    raise ValueError(f"unknown weighting scheme {scheme!r}; expected one of {SCHEMES}")


def oracle_weights(partial: Corpus, gold: Corpus) -> list[np.ndarray]:
    """Weight 0 on default negatives that are entity tokens in ``gold``, 1 elsewhere."""
    if [s.words for s in partial] != [s.words for s in gold]:
        raise ValueError("partial and gold corpora are tokenized differently")
    out = []
    for sp, sg in zip(partial, gold):
        out.append(np.array([0.0 if tp == "O" and tg != "O" else 1.0
                             for tp, tg in zip(sp.tags, sg.tags)]))
    return out
