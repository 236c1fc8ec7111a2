"""Linear-chain CRF trained with a soft-label marginal likelihood.

Each token carries a distribution ``G_i`` over labels. The loss of a
sentence is ``-log sum_y q(y) P(y|x)`` with ``q(y) = prod_i G_i[y_i]``,
which reduces to the usual CRF negative log-likelihood when every ``G_i``
is one-hot. Emission scores are linear in sparse context features.

All lattice arithmetic is done in log space. The batched routines take
arrays of shape (batch, length, labels) holding sentences of equal length.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .features import FeatureIndexer
from .validation import check_sample_weight, check_sequences, unique_labels

FORMAT = "cblner-crf"
VERSION = 1


def logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    """log-sum-exp that returns -inf (not nan) for all -inf slices."""
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def safe_log(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p)


# -- soft labels ------------------------------------------------------------

def soft_labels(labels, weights, n_labels: int, label_index: dict | None = None,
                outside: int = 0) -> np.ndarray:
    """Soft gold distribution for one sentence.

    ``labels`` holds label indices (or strings when ``label_index`` is given);
    a token labelled with the outside label (or ``None``) is a default
    negative and gets ``G[O] = max(1/L, v)`` with the remaining mass spread
    evenly over the other labels. Any other label is trusted and one-hot.
    """
    if n_labels < 2:
        raise ValueError("soft labels need at least 2 labels")
    weights = np.asarray(weights, dtype=float)
    G = np.zeros((len(weights), n_labels))
    for i, (lab, v) in enumerate(zip(labels, weights)):
        if label_index is not None and lab is not None:
            lab = label_index[lab]
        if lab is None or lab == outside:
            g_out = max(1.0 / n_labels, min(float(v), 1.0))
            G[i] = (1.0 - g_out) / (n_labels - 1)
            G[i, outside] = g_out
        else:
            G[i, lab] = 1.0
    return G


# -- lattice routines -------------------------------------------------------

def forward(emissions, trans, start, stop):
    """Forward log-potentials ``alpha`` (B, n, L) and log-partition (B,)."""
    B, n, L = emissions.shape
    alpha = np.empty((B, n, L))
    alpha[:, 0] = start + emissions[:, 0]
    for t in range(1, n):
        alpha[:, t] = logsumexp(alpha[:, t - 1, :, None] + trans, axis=1) + emissions[:, t]
    return alpha, logsumexp(alpha[:, -1] + stop, axis=1)


def backward(emissions, trans, stop):
    B, n, L = emissions.shape
    beta = np.empty((B, n, L))
    beta[:, -1] = stop
    for t in range(n - 2, -1, -1):
        beta[:, t] = logsumexp(trans + (emissions[:, t + 1] + beta[:, t + 1])[:, None, :], axis=2)
    return beta


@dataclass
class Expectations:
    log_z: np.ndarray       # (B,)
    nodes: np.ndarray       # (B, n, L) token marginals
    edges: np.ndarray       # (L, L) summed over batch and positions


def expectations(emissions, trans, start, stop) -> Expectations:
    alpha, log_z = forward(emissions, trans, start, stop)
    beta = backward(emissions, trans, stop)
    with np.errstate(invalid="ignore"):
        nodes = np.exp(alpha + beta - log_z[:, None, None])
        if emissions.shape[1] > 1:
            e = (alpha[:, :-1, :, None] + trans + (emissions[:, 1:] + beta[:, 1:])[:, :, None, :]
                 - log_z[:, None, None, None])
            edges = np.exp(e).sum(axis=(0, 1))
        else:
            edges = np.zeros_like(trans)
    return Expectations(log_z, np.nan_to_num(nodes), np.nan_to_num(edges))


def marginal_loss_and_grad(emissions, trans, start, stop, G):
    """Soft-label loss per sentence and gradients w.r.t. all potentials.

    Returns ``(losses (B,), d_emissions (B, n, L), d_trans, d_start, d_stop)``.
    """
    if np.isnan(emissions).any() or np.isnan(G).any():
        raise ValueError("NaN in CRF inputs")
    free = expectations(emissions, trans, start, stop)
    # Dividing each row of G by its max leaves the clamped marginals unchanged
    # and makes uniform rows add exactly nothing to the lattice.
    g_max = G.max(axis=2, keepdims=True)
    clamped = expectations(emissions + safe_log(G / g_max), trans, start, stop)
    losses = free.log_z - clamped.log_z - np.log(g_max[..., 0]).sum(axis=1)
    d_emit = free.nodes - clamped.nodes
    d_trans = free.edges - clamped.edges
    d_start = d_emit[:, 0].sum(axis=0)
    d_stop = d_emit[:, -1].sum(axis=0)
    return losses, d_emit, d_trans, d_start, d_stop


def viterbi(emissions, trans, start, stop):
    """Best label path and its score for each sentence in the batch."""
    B, n, L = emissions.shape
    score = start + emissions[:, 0]
    back = np.zeros((B, n, L), dtype=np.int64)
    for t in range(1, n):
        cand = score[:, :, None] + trans
        back[:, t] = cand.argmax(axis=1)
        score = cand.max(axis=1) + emissions[:, t]
    score = score + stop
    paths = np.zeros((B, n), dtype=np.int64)
    paths[:, -1] = score.argmax(axis=1)
    for t in range(n - 1, 0, -1):
        paths[:, t - 1] = back[np.arange(B), t, paths[:, t]]
    return paths, score.max(axis=1)


def path_score(emissions, trans, start, stop, path) -> float:
    """Unnormalized score of one label path for a single (n, L) emission matrix."""
    path = np.asarray(path)
    s = start[path[0]] + stop[path[-1]] + emissions[np.arange(len(path)), path].sum()
    return float(s + trans[path[:-1], path[1:]].sum())


# -- estimator --------------------------------------------------------------

class MarginalCRF(ClassifierMixin, BaseEstimator):
    """Linear-chain CRF over sparse features, trained on soft gold labels.

    ``fit`` turns labels plus per-token instance weights into soft labels
    (see :func:`soft_labels`); ``fit_soft`` takes the distributions directly.
    Optimization is minibatch SGD with AdaGrad step sizes over sentences
    bucketed by length.

    Parameters
    ----------
    n_epochs : int, default=10
    learning_rate : float, default=0.1
        AdaGrad base step.
    l2 : float, default=1e-4
        Strength of ``0.5 * l2 * ||theta||^2`` added once to the corpus loss.
    batch_size : int, default=32
    labels : list of str, optional
        Label order; the outside label ``"O"`` must come first.
    clusters : dict, optional
    random_state : int, optional
    """

    def __init__(self, n_epochs=10, learning_rate=0.1, l2=1e-4, batch_size=32,
                 labels=None, clusters=None, random_state=None):
        self.n_epochs = n_epochs
        self.learning_rate = learning_rate
        self.l2 = l2
        self.batch_size = batch_size
        self.labels = labels
        self.clusters = clusters
        self.random_state = random_state

    # parameters are kept as separate arrays: coef_ (F, L), transitions_ (L, L),
    # start_ (L,), stop_ (L,)

    def _init_params(self, X, classes):
        self.classes_ = list(classes)
        if self.classes_[0] != "O":
            raise ValueError("the outside label 'O' must be the first label")
        self._label_index = {c: k for k, c in enumerate(self.classes_)}
        self.indexer_ = FeatureIndexer(self.clusters).fit(X)
        L = len(self.classes_)
        self.coef_ = np.zeros((len(self.indexer_), L))
        self.transitions_ = np.zeros((L, L))
        self.start_ = np.zeros(L)
        self.stop_ = np.zeros(L)
        return self

    def params(self) -> list[np.ndarray]:
        return [self.coef_, self.transitions_, self.start_, self.stop_]

    def emissions(self, words) -> np.ndarray:
        return np.asarray(self.indexer_.matrix(words) @ self.coef_)

    def soft_labels(self, y, sample_weight=None) -> list[np.ndarray]:
        weights = check_sample_weight(sample_weight, y)
        return [soft_labels(tags, w, len(self.classes_), self._label_index)
                for tags, w in zip(y, weights)]

    def fit(self, X, y, sample_weight=None):
        X, y = check_sequences(X, y, allow_missing_labels=True)
        classes = self.labels if self.labels is not None else unique_labels(y)
        self._init_params(X, classes)
        unknown = {t for tags in y for t in tags if t is not None and t not in self._label_index}
        if unknown:
            raise ValueError(f"labels not in the label set: {sorted(unknown)}")
        return self._train(X, self.soft_labels(y, sample_weight))

    def fit_soft(self, X, G, classes):
        X = check_sequences(X)
        G = [np.asarray(g, dtype=float) for g in G]
        if len(G) != len(X):
            raise ValueError("G and X differ in length")
        for k, (g, words) in enumerate(zip(G, X)):
            if g.shape != (len(words), len(classes)):
                raise ValueError(f"sentence {k}: G has shape {g.shape}, expected "
                                 f"({len(words)}, {len(classes)})")
            if not np.all(np.isfinite(g)) or np.any(g < 0) or not np.allclose(g.sum(axis=1), 1.0):
                raise ValueError(f"sentence {k}: rows of G must be probability distributions")
        self._init_params(X, classes)
        return self._train(X, G)

    def _buckets(self, X, G):
        by_len: dict[int, list[int]] = {}
        for k, words in enumerate(X):
            if words:
                by_len.setdefault(len(words), []).append(k)
        batches = []
        for n in sorted(by_len):
            ids = by_len[n]
            for j in range(0, len(ids), self.batch_size):
                chunk = ids[j:j + self.batch_size]
                M = sp.vstack([self.indexer_.matrix(X[k]) for k in chunk]).tocsr()
                batches.append((n, M, np.stack([G[k] for k in chunk])))
        return batches

    def _train(self, X, G):
        if not any(X):
            raise ValueError("empty training set")
        rng = np.random.default_rng(self.random_state)
        batches = self._buckets(X, G)
        n_sent = sum(len(g) for _, _, g in batches)
        params = self.params()
        accum = [np.zeros_like(p) for p in params]
        eps = 1e-8
        self.loss_curve_ = []
        for _ in range(self.n_epochs):
            total = 0.0
            for b in rng.permutation(len(batches)):
                n, M, Gb = batches[b]
                B, L = len(Gb), len(self.classes_)
                emit = np.asarray(M @ self.coef_).reshape(B, n, L)
                if not (np.all(np.isfinite(emit)) and np.all(np.isfinite(self.transitions_))):
                    raise FloatingPointError("CRF training diverged; try a smaller learning_rate")
                losses, d_emit, d_trans, d_start, d_stop = marginal_loss_and_grad(
                    emit, self.transitions_, self.start_, self.stop_, Gb)
                total += float(losses.sum())
                grads = [np.asarray(M.T @ d_emit.reshape(B * n, L)), d_trans, d_start, d_stop]
                share = B / n_sent
                for p, g, acc in zip(params, grads, accum):
                    if self.l2:
                        g = g + self.l2 * share * p
                    acc += g * g
                    p -= self.learning_rate * g / (np.sqrt(acc) + eps)
            if not np.isfinite(total) or not all(np.all(np.isfinite(p)) for p in params):
                raise FloatingPointError("CRF training diverged; try a smaller learning_rate")
            self.loss_curve_.append(total + 0.5 * self.l2 * sum(float((p * p).sum()) for p in params))
        return self

    # -- inference ----------------------------------------------------------

    def _lattices(self, X):
        X = check_sequences(X)
        for words in X:
            if not words:
                yield words, None
            else:
                yield words, self.emissions(words)[None]

    def predict(self, X) -> list[list[str]]:
        check_is_fitted(self, "coef_")
        out = []
        for words, emit in self._lattices(X):
            if emit is None:
                out.append([])
                continue
            path, _ = viterbi(emit, self.transitions_, self.start_, self.stop_)
            out.append([self.classes_[k] for k in path[0]])
        return out

    def predict_proba(self, X) -> list[np.ndarray]:
        """Per-token marginal label distributions from forward-backward."""
        check_is_fitted(self, "coef_")
        out = []
        for words, emit in self._lattices(X):
            if emit is None:
                out.append(np.zeros((0, len(self.classes_))))
                continue
            out.append(expectations(emit, self.transitions_, self.start_, self.stop_).nodes[0])
        return out

    def score(self, X, y, sample_weight=None):
        pred = self.predict(X)
        flat_p = [t for row in pred for t in row]
        flat_y = [t for row in y for t in row]
        return float(np.mean([a == b for a, b in zip(flat_p, flat_y)]))

    # -- persistence --------------------------------------------------------

    def to_dict(self) -> dict:
        check_is_fitted(self, "coef_")
        names = sorted(self.indexer_.vocab, key=self.indexer_.vocab.get)
        return {
            "format": FORMAT,
            "version": VERSION,
            "labels": self.classes_,
            "l2": float(self.l2),
            "features": names,
            "emissions": {name: [float(x) for x in self.coef_[k]]
                          for k, name in enumerate(names) if np.any(self.coef_[k])},
            "transitions": self.transitions_.tolist(),
            "start": self.start_.tolist(),
            "stop": self.stop_.tolist(),
            "clusters": dict(self.clusters) if self.clusters else None,
        }

    @classmethod
    def from_dict(cls, doc: dict, clusters=None) -> "MarginalCRF":
        if doc.get("format") != FORMAT or doc.get("version") != VERSION:
            raise ValueError("not a version-1 CRF model file")
        if clusters is None:
            clusters = doc.get("clusters")
        model = cls(l2=doc["l2"], labels=doc["labels"], clusters=clusters)
        model.classes_ = list(doc["labels"])
        model._label_index = {c: k for k, c in enumerate(model.classes_)}
        model.indexer_ = FeatureIndexer(clusters)
        model.indexer_.vocab = {name: k for k, name in enumerate(doc["features"])}
        model.coef_ = np.zeros((len(model.indexer_), len(model.classes_)))
        for name, row in doc["emissions"].items():
            model.coef_[model.indexer_.vocab[name]] = row
        model.transitions_ = np.array(doc["transitions"], dtype=float)
        model.start_ = np.array(doc["start"], dtype=float)
        model.stop_ = np.array(doc["stop"], dtype=float)
        return model

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)


# -- per-sentence objective -------------------------------------------------

def loss(model: MarginalCRF, words, G, regularize: bool = True) -> float:
    """Soft-label loss of one sentence, plus the L2 term when ``regularize``."""
    G = np.asarray(G, dtype=float)
    emit = model.emissions(words)[None]
    value = float(marginal_loss_and_grad(emit, model.transitions_, model.start_, model.stop_,
                                         G[None])[0][0])
    if regularize and model.l2:
        value += 0.5 * model.l2 * sum(float((p * p).sum()) for p in model.params())
    return value


def gradient(model: MarginalCRF, words, G, regularize: bool = True) -> list[np.ndarray]:
    """Gradient of :func:`loss` w.r.t. (coef_, transitions_, start_, stop_)."""
    G = np.asarray(G, dtype=float)
    M = model.indexer_.matrix(words)
    emit = np.asarray(M @ model.coef_)[None]
    _, d_emit, d_trans, d_start, d_stop = marginal_loss_and_grad(
        emit, model.transitions_, model.start_, model.stop_, G[None])
    grads = [np.asarray(M.T @ d_emit[0]), d_trans, d_start, d_stop]
    if regularize and model.l2:
        grads = [g + model.l2 * p for g, p in zip(grads, model.params())]
    return grads
