"""Corpus data model, CoNLL I/O, BIO/span conversion, entity ratios and span F1."""
from __future__ import annotations

import io
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

OUTSIDE = "O"
ENTITY = "ENT"


class ConllFormatError(ValueError):
    """Raised for unparseable CoNLL input; carries the 1-based line number."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class TokenizationMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Token:
    surface: str
    sent_idx: int
    tok_idx: int

    def __post_init__(self):
        if not self.surface:
            raise ValueError("token surface must be nonempty")
        if self.sent_idx < 0 or self.tok_idx < 0:
            raise ValueError("token indices must be nonnegative")


@dataclass(frozen=True)
class SpanLabel:
    sent_idx: int
    start: int
    end: int
    etype: str

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid span bounds [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[Token, ...]
    tags: tuple[str, ...]

    def __post_init__(self):
        if len(self.tokens) != len(self.tags):
            raise ValueError("tags and tokens differ in length")
        prev = OUTSIDE
        for tag in self.tags:
            prefix, etype = split_tag(tag)
            if prefix == "I" and prev[2:] != etype:
                raise ValueError(f"invalid BIO sequence: {prev} followed by {tag}")
            prev = tag

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def words(self) -> list[str]:
        return [t.surface for t in self.tokens]

    @classmethod
    def from_words(cls, words: Sequence[str], tags: Sequence[str], sent_idx: int = 0) -> "Sentence":
        toks = tuple(Token(w, sent_idx, i) for i, w in enumerate(words))
        return cls(toks, tuple(tags))


@dataclass(frozen=True)
class Corpus:
    sentences: tuple[Sentence, ...]
    label_set: tuple[str, ...] = field(default=())

    def __post_init__(self):
        types = set(self.label_set)
        found = {t[2:] for s in self.sentences for t in s.tags if t != OUTSIDE}
        if not self.label_set:
            object.__setattr__(self, "label_set", tuple(sorted(found)))
        elif not found <= types:
            raise ValueError(f"tags use types outside label_set: {sorted(found - types)}")

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    @property
    def tagset_size(self) -> int:
        return 2 * len(self.label_set) + 1

    @property
    def n_tokens(self) -> int:
        return sum(len(s) for s in self.sentences)

    @property
    def X(self) -> list[list[str]]:
        return [s.words for s in self.sentences]

    @property
    def y(self) -> list[list[str]]:
        return [list(s.tags) for s in self.sentences]

    @property
    def tags_bio(self) -> list[str]:
        out = [OUTSIDE]
        for t in self.label_set:
            out += [f"B-{t}", f"I-{t}"]
        return out

    @classmethod
    def from_lists(cls, X: Sequence[Sequence[str]], y: Sequence[Sequence[str]],
                   label_set: Sequence[str] = ()) -> "Corpus":
        if len(X) != len(y):
            raise ValueError("X and y differ in length")
        sents = tuple(Sentence.from_words(w, t, i) for i, (w, t) in enumerate(zip(X, y)))
        return cls(sents, tuple(label_set))

    def with_tags(self, tags: Sequence[Sequence[str]]) -> "Corpus":
        """Same tokens, new tag sequences (repaired to valid BIO)."""
        if len(tags) != len(self.sentences):
            raise ValueError("tag sequence count differs from sentence count")
        sents = tuple(Sentence(s.tokens, tuple(repair_bio(t))) for s, t in zip(self.sentences, tags))
        return Corpus(sents, self.label_set)

    def spans(self) -> list[SpanLabel]:
        return [sp for s in self.sentences for sp in spans_from_bio(s)]


@dataclass(frozen=True)
class PartialAnnotation:
    """A corpus read as P (tokens under non-O tags) and N (everything else)."""

    corpus: Corpus

    @property
    def p_mask(self) -> list[np.ndarray]:
        return [np.array([t != OUTSIDE for t in s.tags], dtype=bool) for s in self.corpus]

    @property
    def n_positive(self) -> int:
        return sum(t != OUTSIDE for s in self.corpus for t in s.tags)

    @property
    def n_tokens(self) -> int:
        return self.corpus.n_tokens


def as_partial(obj: Corpus | PartialAnnotation) -> PartialAnnotation:
    return obj if isinstance(obj, PartialAnnotation) else PartialAnnotation(obj)


def split_tag(tag: str) -> tuple[str, str]:
    if tag == OUTSIDE:
        return OUTSIDE, ""
    if len(tag) > 2 and tag[1] == "-" and tag[0] in "BI":
        return tag[0], tag[2:]
    raise ValueError(f"unknown tag {tag!r}")


def repair_bio(tags: Sequence[str]) -> list[str]:
    """Rewrite any I-X that does not continue an X span to B-X."""
    out = []
    prev = OUTSIDE
    for tag in tags:
        prefix, etype = split_tag(tag)
        if prefix == "I" and prev[2:] != etype:
            tag = "B-" + etype
        out.append(tag)
        prev = tag
    return out


def spans_from_bio(sentence: Sentence | Sequence[str], sent_idx: int | None = None) -> list[SpanLabel]:
    if isinstance(sentence, Sentence):
        tags = sentence.tags
        if sent_idx is None:
            sent_idx = sentence.tokens[0].sent_idx if sentence.tokens else 0
    else:
        tags = sentence
    sent_idx = sent_idx or 0
    spans = []
    start = etype = None
    for i, tag in enumerate(tags):
        prefix, t = split_tag(tag)
        if prefix == "I" and etype == t:
            continue
        if etype is not None:
            spans.append(SpanLabel(sent_idx, start, i, etype))
            start = etype = None
        if prefix != OUTSIDE:
            start, etype = i, t
    if etype is not None:
        spans.append(SpanLabel(sent_idx, start, len(tags), etype))
    return spans


def bio_from_spans(length: int, spans: Iterable[SpanLabel]) -> list[str]:
    tags = [OUTSIDE] * length
    for sp in sorted(spans, key=lambda s: s.start):
        if sp.end > length:
            raise ValueError(f"span {sp} exceeds sentence length {length}")
        if any(t != OUTSIDE for t in tags[sp.start:sp.end]):
            raise ValueError(f"span {sp} overlaps another span")
        tags[sp.start] = "B-" + sp.etype
        for i in range(sp.start + 1, sp.end):
            tags[i] = "I-" + sp.etype
    return tags


def binarize(tags: Sequence[str]) -> list[str]:
    return [OUTSIDE if t == OUTSIDE else ENTITY for t in tags]


# -- CoNLL I/O --------------------------------------------------------------

def _read_text(stream) -> str:
    if isinstance(stream, bytes):
        return stream.decode("utf-8")
    if isinstance(stream, str) or hasattr(stream, "__fspath__"):
        with open(stream, encoding="utf-8") as fh:
            return fh.read()
    data = stream.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def read_conll(stream) -> Corpus:
    """Parse column-formatted text; the tag is the last column.

    ``stream`` may be a path, a text or byte stream, or raw bytes.
    ``-DOCSTART-`` lines are skipped.
    """
    text = _read_text(stream)
    sentences = []
    words: list[str] = []
    tags: list[str] = []

    def flush():
        if words:
            idx = len(sentences)
            toks = tuple(Token(w, idx, i) for i, w in enumerate(words))
            sentences.append(Sentence(toks, tuple(repair_bio(tags))))
            words.clear()
            tags.clear()

    for lineno, line in enumerate(text.splitlines(), 1):
        cols = line.split()
        if not cols:
            flush()
            continue
        if cols[0] == "-DOCSTART-":
            continue
        if len(cols) < 2:
            raise ConllFormatError(f"expected at least 2 columns, got {line!r}", lineno)
        try:
            split_tag(cols[-1])
        except ValueError:
            raise ConllFormatError(f"unknown tag prefix in {cols[-1]!r}", lineno) from None
        words.append(cols[0])
        tags.append(cols[-1])
    flush()
    return Corpus(tuple(sentences))


def write_conll(corpus: Corpus) -> bytes:
    buf = io.StringIO()
    for k, sent in enumerate(corpus.sentences):
        if k:
            buf.write("\n")
        for tok, tag in zip(sent.tokens, sent.tags):
            buf.write(f"{tok.surface} {tag}\n")
    return buf.getvalue().encode("utf-8")


def save_conll(corpus: Corpus, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_conll(corpus))


# -- weights sidecar --------------------------------------------------------

WEIGHTS_HEADER = "sent_idx\ttok_idx\tweight"


def write_weights(weights: Sequence[np.ndarray]) -> bytes:
    lines = [WEIGHTS_HEADER]
    for s, row in enumerate(weights):
        for i, v in enumerate(row):
            lines.append(f"{s}\t{i}\t{float(v):.9g}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def read_weights(stream, corpus: Corpus | None = None) -> list[np.ndarray]:
    lines = _read_text(stream).splitlines()
    if not lines or lines[0].strip() != WEIGHTS_HEADER:
        raise ValueError("weights file is missing its header line")
    entries: dict[tuple[int, int], float] = {}
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        try:
            s, i, v = line.split("\t")
            entries[int(s), int(i)] = float(v)
        except ValueError:
            raise ValueError(f"line {lineno}: malformed weights entry {line!r}") from None
    if corpus is not None:
        lengths = [len(s) for s in corpus]
    else:
        n_sent = max((s for s, _ in entries), default=-1) + 1
        lengths = [0] * n_sent
        for s, i in entries:
            lengths[s] = max(lengths[s], i + 1)
    out = []
    for s, n in enumerate(lengths):
        try:
            out.append(np.array([entries[s, i] for i in range(n)], dtype=float))
        except KeyError as exc:
            raise ValueError(f"weights file has no entry for token {exc.args[0]}") from None
    if len(entries) != sum(lengths):
        raise ValueError("weights file has entries for tokens outside the corpus")
    return out


# -- ratios and scoring -----------------------------------------------------

def entity_ratio(pa: Corpus | PartialAnnotation) -> float:
    pa = as_partial(pa)
    n = pa.n_tokens
    if n == 0:
        raise ValueError("entity ratio of an empty corpus is undefined")
    return pa.n_positive / n


def weighted_entity_ratio(pa: Corpus | PartialAnnotation, weights: Sequence[np.ndarray]) -> float:
    pa = as_partial(pa)
    n_pos = 0
    neg_mass = 0.0
    for mask, v in zip(pa.p_mask, weights, strict=True):
        v = np.asarray(v, dtype=float)
        if np.any(v < 0):
            raise ValueError("instance weights must be nonnegative")
        n_pos += int(mask.sum())
        neg_mass += float(v[~mask].sum())
    if n_pos + neg_mass == 0:
        raise ValueError("weighted entity ratio undefined: no positives and zero negative mass")
    return n_pos / (n_pos + neg_mass)


@dataclass(frozen=True)
class Scores:
    precision: float
    recall: float
    f1: float
    tp: int = 0
    n_pred: int = 0
    n_gold: int = 0

    def __iter__(self):
        return iter((self.precision, self.recall, self.f1))


def check_same_tokens(a: Corpus, b: Corpus) -> None:
    if len(a) != len(b):
        raise TokenizationMismatchError(f"sentence counts differ: {len(a)} vs {len(b)}")
    for k, (sa, sb) in enumerate(zip(a, b)):
        if sa.words != sb.words:
            raise TokenizationMismatchError(f"sentence {k} is tokenized differently")


def span_f1(gold: Corpus, pred: Corpus) -> Scores:
    """Micro-averaged exact-match (boundaries and type) span scores."""
    check_same_tokens(gold, pred)
    tp = n_pred = n_gold = 0
    for k, (sg, sp) in enumerate(zip(gold, pred)):
        g = Counter(spans_from_bio(sg.tags, k))
        p = Counter(spans_from_bio(sp.tags, k))
        tp += sum((g & p).values())
        n_gold += sum(g.values())
        n_pred += sum(p.values())
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Scores(precision, recall, f1, tp, n_pred, n_gold)
