"""Synthetic NER corpora with a planted entity lexicon.

Sentences mix Zipf-distributed filler words with entity mentions drawn
from a fixed lexicon, so that a gold corpus and a held-out test corpus can
share names. Entity mentions are usually, but not always, flanked by
type-specific trigger words; sentence-initial words and day/month names
are capitalized non-entities, so word shape alone is not decisive.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Sentence, Token, bio_from_spans, SpanLabel

TYPES = ("LOC", "MISC", "ORG", "PER")

FUNCTION_WORDS = (
    "the of and to a in for is on that by with was at from as it has he will be an which are "
    "after were its but this two his had been not first year new last over they who would up "
    "also more against one their three there when into we week about out than or other told "
    "percent market million team match game win official company shares league second since "
    "before could between under while where government people police minister club season "
    "points deal report talks plans price prices bank state world group final cup win lost "
    "home away early late close high low rose fell added told expected".split()
)

CAPITALIZED_NON_ENTITIES = (
    "Monday Tuesday Wednesday Thursday Friday Saturday Sunday January February March April "
    "June July August September October November December The But It He They".split()
)

TRIGGERS = {
    "PER": (("Mr.", "coach", "minister", "striker", "President", "captain"), ("said", "told", "added", "'s")),
    "ORG": (("shares of", "chairman of", "analysts at", "signed for"), ("shares", "officials", "reported", "spokesman")),
    "LOC": (("in", "near", "visited", "north of"), ("province", "border", "police", "city")),
    "MISC": (("the", "a", "several"), ("team", "government", "people", "championship")),
}

ORG_SUFFIXES = ("Corp", "Group", "United", "Bank", "Inc", "Party")
LOC_ENDINGS = ("ia", "burg", "ton", "stan", "land")
MISC_ENDINGS = ("ian", "ese", "ish")

_ONSETS = ("b", "d", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "ch", "st", "tr", "sh")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ou")
_CODAS = ("", "", "n", "r", "s", "l", "k")


def _pseudo_word(rng: np.random.Generator, syllables: int) -> str:
    parts = []
    for _ in range(syllables):
        parts.append(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                     + _CODAS[rng.integers(len(_CODAS))])
    return "".join(parts)


def _name(rng, used: set[str]) -> str:
    while True:
        w = _pseudo_word(rng, int(rng.integers(2, 4))).capitalize()
        if w not in used:
            used.add(w)
            return w


@dataclass
class Lexicon:
    names: list[tuple[str, tuple[str, ...]]]    # (type, tokens)
    filler: list[str]
    name_probs: np.ndarray
    filler_probs: np.ndarray


def make_lexicon(n_names: int = 300, n_filler: int = 600, seed: int = 0,
                 zipf_s: float = 1.0) -> Lexicon:
    rng = np.random.default_rng(seed)
    used: set[str] = set()
    names = []
    for k in range(n_names):
        etype = TYPES[k % len(TYPES)]
        if etype == "PER":
            toks = (_name(rng, used), _name(rng, used)) if rng.random() < 0.7 else (_name(rng, used),)
        elif etype == "ORG":
            r = rng.random()
            if r < 0.3:
                toks = (_pseudo_word(rng, 1).upper()[:3] + str(k),)
            else:
                toks = (_name(rng, used), ORG_SUFFIXES[k % len(ORG_SUFFIXES)])
        elif etype == "LOC":
            stem = _name(rng, used) + LOC_ENDINGS[k % len(LOC_ENDINGS)]
            toks = (stem,) if rng.random() < 0.8 else ("New", stem)
        else:
            toks = (_name(rng, used) + MISC_ENDINGS[k % len(MISC_ENDINGS)],)
        names.append((etype, toks))
    lower = set(FUNCTION_WORDS)
    filler = list(FUNCTION_WORDS)
    while len(filler) < n_filler:
        w = _pseudo_word(rng, int(rng.integers(1, 4)))
        if w not in lower:
            lower.add(w)
            filler.append(w)
    ranks = np.arange(1, n_names + 1)
    name_p = 1.0 / ranks ** zipf_s
    name_p = rng.permutation(name_p)
    filler_p = 1.0 / np.arange(1, len(filler) + 1) ** 1.1
    return Lexicon(names, filler, name_p / name_p.sum(), filler_p / filler_p.sum())


def generate_corpus(lexicon: Lexicon, n_sentences: int = 2000, seed: int = 0,
                    mean_entities: float = 1.4, length_range: tuple[int, int] = (10, 24),
                    trigger_prob: float = 0.85) -> Corpus:
    """Sample sentences from ``lexicon``; returns a gold BIO corpus."""
    rng = np.random.default_rng(seed)
    sentences = []
    for s in range(n_sentences):
        target_len = int(rng.integers(length_range[0], length_range[1] + 1))
        n_ent = int(rng.poisson(mean_entities))
        chunks: list[tuple[list[str], str | None]] = []
        for _ in range(n_ent):
            etype, toks = lexicon.names[int(rng.choice(len(lexicon.names), p=lexicon.name_probs))]
            pre, post = TRIGGERS[etype]
            if rng.random() < trigger_prob:
                if rng.random() < 0.6:
                    chunks.append((pre[int(rng.integers(len(pre)))].split(), None))
                    chunks.append((list(toks), etype))
                else:
                    chunks.append((list(toks), etype))
                    chunks.append((post[int(rng.integers(len(post)))].split(), None))
            else:
                chunks.append((list(toks), etype))
        used = sum(len(c) for c, _ in chunks)
        n_fill = max(1, target_len - used - 1)
        fill = []
        for _ in range(n_fill):
            if rng.random() < 0.04:
                fill.append(CAPITALIZED_NON_ENTITIES[int(rng.integers(len(CAPITALIZED_NON_ENTITIES)))])
            elif rng.random() < 0.03:
                fill.append(str(int(rng.integers(1, 2000))))
            else:
                fill.append(lexicon.filler[int(rng.choice(len(lexicon.filler), p=lexicon.filler_probs))])
        # scatter chunks between filler words
        slots = np.sort(rng.integers(0, n_fill + 1, size=len(chunks)))
        words: list[str] = []
        spans: list[SpanLabel] = []
        c = 0
        for pos in range(n_fill + 1):
            while c < len(chunks) and slots[c] == pos:
                toks, etype = chunks[c]
                if etype is not None:
                    if spans and spans[-1].end == len(words):
                        words.append(",")
                    spans.append(SpanLabel(s, len(words), len(words) + len(toks), etype))
                words.extend(toks)
                c += 1
            if pos < n_fill:
                words.append(fill[pos])
        words.append(".")
        if words[0].islower():
            words[0] = words[0].capitalize()
        tags = bio_from_spans(len(words), spans)
        tokens = tuple(Token(w, s, i) for i, w in enumerate(words))
        sentences.append(Sentence(tokens, tuple(tags)))
    return Corpus(tuple(sentences), TYPES)


def make_dataset(n_train: int = 2000, n_test: int = 600, seed: int = 0, n_names: int = 300):
    """Gold train and test corpora sharing one lexicon."""
    lex = make_lexicon(n_names=n_names, seed=seed)
    train = generate_corpus(lex, n_train, seed=seed + 1)
    test = generate_corpus(lex, n_test, seed=seed + 2)
    return train, test
