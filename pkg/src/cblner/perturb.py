"""Simulate partial annotation by lowering recall, then precision, of a gold corpus."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import OUTSIDE, Corpus, SpanLabel, bio_from_spans, span_f1, spans_from_bio


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class PerturbConfig:
    target_precision: float = 0.9
    target_recall: float = 0.5
    noise_span_lengths: tuple[int, int] = (1, 3)
    seed: int = 0

    def __post_init__(self):
        for name in ("target_precision", "target_recall"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        lo, hi = self.noise_span_lengths
        if not 1 <= lo <= hi:
            raise ValueError(f"invalid noise span length range {self.noise_span_lengths}")


def _surface(corpus: Corpus, sp: SpanLabel) -> str:
    words = corpus.sentences[sp.sent_idx].words
    return " ".join(words[sp.start:sp.end])


def _rebuild(corpus: Corpus, spans_by_sent: list[list[SpanLabel]]) -> Corpus:
    tags = [bio_from_spans(len(s), spans) for s, spans in zip(corpus, spans_by_sent)]
    return corpus.with_tags(tags)


def lower_recall(gold: Corpus, target_recall: float, rng: np.random.Generator) -> tuple[Corpus, float]:
    """Untag every occurrence of randomly drawn surface forms until at most
    ``target_recall`` of the original spans remain.

    Returns the reduced corpus and the achieved recall.
    """
    if not 0 < target_recall <= 1:
        raise ValueError("target_recall must lie in (0, 1]")
    spans = [spans_from_bio(s.tags, k) for k, s in enumerate(gold)]
    total = sum(map(len, spans))
    if total == 0:
        raise ValueError("gold corpus has no spans")

    counts: dict[str, int] = {}
    for sent_spans in spans:
        for sp in sent_spans:
            key = _surface(gold, sp)
            counts[key] = counts.get(key, 0) + 1

    surfaces = sorted(counts)
    removed: set[str] = set()
    remaining = total
    while remaining / total > target_recall:
        pick = surfaces.pop(int(rng.integers(len(surfaces))))
        removed.add(pick)
        remaining -= counts[pick]

    kept = [[sp for sp in row if _surface(gold, sp) not in removed] for row in spans]
    return _rebuild(gold, kept), remaining / total


def noise_span_count(k: int, target_precision: float) -> int:
    """Round-half-up of k(1-p)/p, the number of noise spans giving precision p."""
    return int(math.floor(k * (1 - target_precision) / target_precision + 0.5))


def lower_precision(partial: Corpus, target_precision: float, lengths: tuple[int, int],
                    rng: np.random.Generator, label_set=None) -> Corpus:
    if not 0 < target_precision <= 1:
        raise ValueError("target_precision must lie in (0, 1]")
    types = tuple(label_set or partial.label_set)
    spans = [spans_from_bio(s.tags, k) for k, s in enumerate(partial)]
    k = sum(map(len, spans))
    m = noise_span_count(k, target_precision)
    if m == 0:
        return partial
    if not types:
        raise ValueError("cannot draw noise span types from an empty label set")

    occupied = [np.array([t != OUTSIDE for t in s.tags]) for s in partial]
    lengths_sent = [len(s) for s in partial]
    lo, hi = lengths
    placed = attempts = 0
    while placed < m:
        if attempts >= 1000 * m:
            raise PlacementError(
                f"placed only {placed} of {m} noise spans after {attempts} attempts"
            )
        attempts += 1
        s = int(rng.integers(len(partial)))
        start = int(rng.integers(lengths_sent[s]))
        length = int(rng.integers(lo, hi + 1))
        etype = types[int(rng.integers(len(types)))]
        end = min(start + length, lengths_sent[s])
        if occupied[s][start:end].any():
            continue
        occupied[s][start:end] = True
        spans[s].append(SpanLabel(s, start, end, etype))
        placed += 1
    return _rebuild(partial, spans)


def perturb(gold: Corpus, cfg: PerturbConfig) -> tuple[Corpus, float, float]:
    """Recall first, then precision; returns (partial, precision, recall) measured against gold."""
    rng = np.random.default_rng(cfg.seed)
    partial, _ = lower_recall(gold, cfg.target_recall, rng)
    partial = lower_precision(partial, cfg.target_precision, cfg.noise_span_lengths, rng,
                              label_set=gold.label_set)
    scores = span_f1(gold, partial)
    return partial, scores.precision, scores.recall
