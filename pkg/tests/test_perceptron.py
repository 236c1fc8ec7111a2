import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cblner.cbl import confidence_O
from cblner.features import FeatureIndexer, extract_features, prev_tag_feature
from cblner.models import load_model
from cblner.perceptron import WeightedPerceptronTagger, softmax
from cblner.synthetic import make_dataset
from oracles import snapshot_averaged_perceptron


@pytest.fixture(scope="module")
def data():
    train, test = make_dataset(n_train=150, n_test=40, seed=3, n_names=60)
    return train.X, train.y, test.X


def _fit(X, y, w=None, **kw):
    kw.setdefault("n_epochs", 3)
    kw.setdefault("random_state", 0)
    return WeightedPerceptronTagger(**kw).fit(X, y, sample_weight=w)


def test_matches_snapshot_averaging_oracle(data):
    X, y, _ = data
    X, y = X[:40], y[:40]
    rng = np.random.default_rng(4)
    w = [rng.random(len(s)) for s in X]
    model = _fit(X, y, w, n_epochs=3, learning_rate=0.7, random_state=11)
    indexer = FeatureIndexer()
    prev = [prev_tag_feature(None)] + [prev_tag_feature(c) for c in model.classes_]
    feats = indexer.fit_index(X, extra=prev)
    assert indexer.vocab == model.indexer_.vocab
    order_rng = np.random.default_rng(11)
    order = np.concatenate([order_rng.permutation(len(X)) for _ in range(3)])
    gold = [[model.classes_.index(t) for t in tags] for tags in y]
    ref = snapshot_averaged_perceptron(feats, gold, w, list(model._prev_rows), len(model.classes_),
                                       len(model.indexer_), order, alpha=0.7)
    np.testing.assert_allclose(model.coef_, ref, rtol=1e-9, atol=1e-12)


def test_zero_weight_equals_instance_deletion(data):
    X, y, _ = data
    rng = np.random.default_rng(0)
    w, y_del = [], []
    for tags in y:
        drop = np.array([t == "O" for t in tags]) & (rng.random(len(tags)) < 0.3)
        w.append(np.where(drop, 0.0, 1.0))
        y_del.append([None if d else t for t, d in zip(tags, drop)])
    a = _fit(X, y, w)
    b = _fit(X, y_del)
    assert np.array_equal(a.coef_, b.coef_)
    assert a.n_updates_ == b.n_updates_


def test_all_zero_weights_leave_model_untrained(data):
    X, y, test_X = data
    m = _fit(X, y, [np.zeros(len(s)) for s in X])
    assert m.n_updates_ == 0 and not m.coef_.any()
    for p in m.predict_proba(test_X[:5]):
        np.testing.assert_allclose(p, 1 / len(m.classes_))


def test_downweighted_false_negatives_never_update():
    X = [["Arsenal", "coach", "Unai", "Emery", "said"]] * 3
    y = [["B-ORG", "O", "O", "O", "O"]] * 3
    w = [np.array([1.0, 1.0, 0.0, 0.0, 1.0])] * 3
    m = _fit(X, y, w)
    vocab = m.indexer_.vocab
    assert not m.coef_[vocab["w[0]=unai"]].any()
    assert not m.coef_[vocab["w[0]=emery"]].any()
    assert m.coef_[vocab["w[0]=arsenal"]].any()


def test_learning_rate_and_weight_scaling_commute(data):
    X, y, _ = data
    rng = np.random.default_rng(1)
    w = [rng.random(len(s)) for s in X]
    a = _fit(X, y, w, learning_rate=1.0)
    b = _fit(X, y, [v / 4 for v in w], learning_rate=4.0)
    assert np.array_equal(a.coef_, b.coef_)


def test_no_op_epochs_leave_averaged_weights_unchanged():
    X = [["the", "Bob", "ran"], ["Ann", "sat"], ["a", "dog"]]
    y = [["O", "B-PER", "O"], ["B-PER", "O"], ["O", "O"]]
    runs = [_fit(X, y, n_epochs=k) for k in (10, 13)]
    assert runs[0].n_updates_ == runs[1].n_updates_
    assert np.array_equal(runs[0].coef_, runs[1].coef_)


def test_frequent_token_gets_confident_label():
    X = [["see", "Zorbon", "now"]] * 100 + [["see", "it", "now"]] * 20
    y = [["O", "B-ORG", "O"]] * 100 + [["O", "O", "O"]] * 20
    m = _fit(X, y)
    p = m.predict_proba([["see", "Zorbon", "now"]])[0]
    assert p[1, m.classes_.index("B-ORG")] > 0.9


def test_confidences_are_distributions(data):
    X, y, test_X = data
    m = _fit(X, y)
    for p in m.predict_proba(test_X):
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_softmax_confidence_values():
    assert softmax(np.array([3.0, 3.0]))[0] == 0.5
    assert softmax(np.array([7.0 + 10, 7.0]))[0] == pytest.approx(1 / (1 + np.exp(-10)), rel=1e-12)
    assert softmax(np.array([10.0, 0.0]))[0] == pytest.approx(0.99995, abs=5e-6)


def test_confidence_O_requires_binary_model(data):
    X, y, _ = data
    with pytest.raises(ValueError, match="binary"):
        confidence_O(_fit(X, y), X[:2])
    binary = [["O" if t == "O" else "ENT" for t in tags] for tags in y]
    m = _fit(X, binary, labels=["O", "ENT"])
    conf = confidence_O(m, X[:3])
    for c, p in zip(conf, m.predict_proba(X[:3])):
        np.testing.assert_array_equal(c, p[:, 0])


def test_deterministic_and_seed_dependent(data):
    X, y, _ = data
    assert np.array_equal(_fit(X, y).coef_, _fit(X, y).coef_)
    assert not np.array_equal(_fit(X, y).coef_, _fit(X, y, random_state=1).coef_)


def test_label_order_and_errors(data):
    X, y, _ = data
    assert _fit(X, y).classes_[0] == "O"
    with pytest.raises(ValueError, match="empty"):
        _fit([], [])
    with pytest.raises(ValueError, match="not in the label set"):
        _fit(X, y, labels=["O", "B-PER"])
    with pytest.raises(ValueError):
        _fit(X, y, [np.full(len(s), -1.0) for s in X])


def test_save_and_load_round_trip(data, tmp_path):
    X, y, test_X = data
    m = _fit(X, y, clusters={"the": "0101"})
    path = tmp_path / "m.json"
    m.save(path)
    doc = json.loads(path.read_text())
    assert doc["format"] == "cblner-perceptron" and doc["version"] == 1
    assert doc["learning_rate"] == 1.0
    back = load_model(path)
    assert back.predict(test_X) == m.predict(test_X)
    for a, b in zip(back.predict_proba(test_X), m.predict_proba(test_X)):
        np.testing.assert_array_equal(a, b)


def test_sklearn_params(data):
    m = WeightedPerceptronTagger(n_epochs=2, learning_rate=0.5)
    assert m.get_params()["learning_rate"] == 0.5
    X, y, _ = data
    assert 0 <= _fit(X, y).score(X, y) <= 1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_same_features_same_set(seed):
    rng = np.random.default_rng(seed)
    words = [str(x) for x in rng.choice(["a", "Bob", "1", "x.y"], size=5)]
    i = int(rng.integers(5))
    assert extract_features(words, i, "O") == extract_features(words, i, "O")
