"""Weighted averaged perceptron token classifier with greedy left-to-right decoding."""
from __future__ import annotations

import json

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .features import FeatureIndexer, prev_tag_feature
from .validation import check_sample_weight, check_sequences, unique_labels

FORMAT = "cblner-perceptron"
VERSION = 1


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class WeightedPerceptronTagger(ClassifierMixin, BaseEstimator):
    """Multiclass averaged perceptron over sparse context features.

    Each token is one training instance. A mistake on token ``i`` with
    weight ``v_i`` moves the gold label's weights up and the predicted
    label's weights down by ``learning_rate * v_i`` on every active feature.
    Tokens with weight 0, or label ``None``, never update the model.

    The averaged weights are the mean of the weight snapshots taken after
    each update, so epochs without mistakes leave them unchanged.

    Parameters
    ----------
    n_epochs : int, default=5
        Passes over the training sentences.
    learning_rate : float, default=1.0
        Base step size, scaled per token by its instance weight.
    labels : list of str, optional
        Fixed label order. Inferred from ``y`` (``"O"`` first) when omitted.
    clusters : dict, optional
        Word to bit-string cluster path, enabling cluster-prefix features.
    random_state : int, optional
        Seed for the per-epoch sentence shuffle.
    """

    def __init__(self, n_epochs=5, learning_rate=1.0, labels=None, clusters=None, random_state=None):
        self.n_epochs = n_epochs
        self.learning_rate = learning_rate
        self.labels = labels
        self.clusters = clusters
        self.random_state = random_state

    def _setup(self, X, y):
        self.classes_ = list(self.labels) if self.labels is not None else unique_labels(y)
        self._label_index = {c: k for k, c in enumerate(self.classes_)}
        prev_feats = [prev_tag_feature(None)] + [prev_tag_feature(c) for c in self.classes_]
        self.indexer_ = FeatureIndexer(self.clusters)
        feats = self.indexer_.fit_index(X, extra=prev_feats)
        vocab = self.indexer_.vocab
        self._prev_rows = np.array([vocab[f] for f in prev_feats[1:]] + [vocab[prev_feats[0]]])
        return feats

    def fit(self, X, y, sample_weight=None):
        """Train on token sequences ``X`` with labels ``y``.

        ``y`` may contain ``None`` for tokens that are not training instances;
        such tokens still get predicted so that the next token sees a
        previous-tag feature.
        """
        X, y = check_sequences(X, y, allow_missing_labels=True)
        if not X or not any(X):
            raise ValueError("empty training set")
        if self.n_epochs < 1:
            raise ValueError("n_epochs must be >= 1")
        weights = check_sample_weight(sample_weight, X)
        feats = self._setup(X, y)
        index = self._label_index
        unknown = {t for tags in y for t in tags if t is not None and t not in index}
        if unknown:
            raise ValueError(f"labels not in the label set: {sorted(unknown)}")

        # one trailing slot per token holds the previous-tag feature row
        feats = [[np.append(active, 0) for active in sent] for sent in feats]
        gold = [np.array([-1 if t is None else index[t] for t in tags]) for tags in y]
        n_feat, n_lab = len(self.indexer_), len(self.classes_)
        W = np.zeros((n_feat, n_lab))
        totals = np.zeros((n_feat, n_lab))
        stamps = np.zeros((n_feat, n_lab), dtype=np.int64)
        bos_row = self._prev_rows[-1]
        alpha = float(self.learning_rate)
        rng = np.random.default_rng(self.random_state)
        clock = 0

        for _ in range(self.n_epochs):
            for s in rng.permutation(len(X)):
                prev_row = bos_row
                for i, rows in enumerate(feats[s]):
                    rows[-1] = prev_row
                    pred = int(np.argmax(W[rows].sum(axis=0)))
                    g = gold[s][i]
                    v = weights[s][i]
                    if g >= 0 and v > 0 and pred != g:
                        step = alpha * v
                        for col, sign in ((g, step), (pred, -step)):
                            totals[rows, col] += (clock - stamps[rows, col]) * W[rows, col]
                            stamps[rows, col] = clock
                            W[rows, col] += sign
                        clock += 1
                    prev_row = self._prev_rows[pred]

        if clock:
            self.coef_ = (totals + (clock - stamps) * W) / clock
        else:
            self.coef_ = W
        self.n_updates_ = clock
        return self

    def _decode(self, words):
        feats = self.indexer_.index(words)
        coef = self.coef_
        scores = np.zeros((len(words), len(self.classes_)))
        preds = np.zeros(len(words), dtype=np.int64)
        prev_row = self._prev_rows[-1]
        for i, active in enumerate(feats):
            sc = coef[active].sum(axis=0) + coef[prev_row]
            scores[i] = sc
            preds[i] = np.argmax(sc)
            prev_row = self._prev_rows[preds[i]]
        return preds, scores

    def decision_function(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "coef_")
        return [self._decode(words)[1] for words in check_sequences(X)]

    def predict(self, X) -> list[list[str]]:
        check_is_fitted(self, "coef_")
        return [[self.classes_[k] for k in self._decode(words)[0]] for words in check_sequences(X)]

    def predict_proba(self, X) -> list[np.ndarray]:
        """Softmax over greedy-decoding label scores, one (n_tokens, n_labels) array per sentence."""
        return [softmax(sc) for sc in self.decision_function(X)]

    def score(self, X, y, sample_weight=None):
        pred = self.predict(X)
        flat_p = [t for row in pred for t in row]
        flat_y = [t for row in y for t in row]
        return float(np.mean([a == b for a, b in zip(flat_p, flat_y)]))

    # -- persistence --------------------------------------------------------

    def to_dict(self) -> dict:
        check_is_fitted(self, "coef_")
        names = sorted(self.indexer_.vocab, key=self.indexer_.vocab.get)
        entries = {name: [float(x) for x in self.coef_[k]]
                   for k, name in enumerate(names) if np.any(self.coef_[k])}
        return {
            "format": FORMAT,
            "version": VERSION,
            "labels": self.classes_,
            "learning_rate": float(self.learning_rate),
            "n_epochs": self.n_epochs,
            "features": names,
            "weights": entries,
            "clusters": dict(self.clusters) if self.clusters else None,
        }

    @classmethod
    def from_dict(cls, doc: dict, clusters=None) -> "WeightedPerceptronTagger":
        if doc.get("format") != FORMAT or doc.get("version") != VERSION:
            raise ValueError("not a version-1 perceptron model file")
        if clusters is None:
            clusters = doc.get("clusters")
        model = cls(n_epochs=doc["n_epochs"], learning_rate=doc["learning_rate"],
                    labels=doc["labels"], clusters=clusters)
        model.classes_ = list(doc["labels"])
        model._label_index = {c: k for k, c in enumerate(model.classes_)}
        model.indexer_ = FeatureIndexer(clusters)
        model.indexer_.vocab = {name: k for k, name in enumerate(doc["features"])}
        vocab = model.indexer_.vocab
        model._prev_rows = np.array([vocab[prev_tag_feature(c)] for c in model.classes_]
                                    + [vocab[prev_tag_feature(None)]])
        model.coef_ = np.zeros((len(vocab), len(model.classes_)))
        for name, row in doc["weights"].items():
            model.coef_[vocab[name]] = row
        model.n_updates_ = None
        return model

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

