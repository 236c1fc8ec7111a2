"""Constrained Binary Learning.

Phase 1 learns a binary entity detector by iterating train, predict and a
constrained inference step that relabels the highest-scoring default
negatives as entities while holding the corpus entity ratio inside a
window that widens each round. Phase 2 turns the detector's confidence in
the outside label into instance weights for a multiclass tagger.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from .corpus import ENTITY, OUTSIDE, Corpus, PartialAnnotation, as_partial, repair_bio
from .perceptron import WeightedPerceptronTagger
from .validation import check_sample_weight, check_sequences, flatten, unflatten
from .weighting import initial_weights

log = logging.getLogger(__name__)

_LOG_FLOOR = 1e-300


class InfeasibleInferenceError(ValueError):
    pass


def _masks(pa) -> list[np.ndarray]:
    if isinstance(pa, (Corpus, PartialAnnotation)):
        return as_partial(pa).p_mask
    return [np.asarray(m, dtype=bool) for m in pa]


# -- balancing --------------------------------------------------------------

def balance_factor(weights, pa, b_star: float) -> float:
    """Scale for the negative weights that makes the weighted entity ratio ``b_star``."""
    if not 0 < b_star < 1:
        raise ValueError("b_star must lie in (0, 1)")
    masks = _masks(pa)
    n_pos = sum(int(m.sum()) for m in masks)
    neg_mass = sum(float(np.asarray(v)[~m].sum()) for v, m in zip(weights, masks))
    if neg_mass <= 0:
        raise ValueError("cannot balance: negative tokens carry zero total weight")
    return (1 - b_star) * n_pos / (b_star * neg_mass)


def balance(weights, pa, b_star: float) -> list[np.ndarray]:
    """Multiply every negative weight by the balancing factor; positives untouched."""
    gamma = balance_factor(weights, pa, b_star)
    return [np.where(m, v, gamma * np.asarray(v, dtype=float)) for v, m in zip(weights, _masks(pa))]


# -- inference --------------------------------------------------------------

def count_window(b: float, delta: float, n: int) -> tuple[int, int]:
    """Integer range of positive counts k with ``b - delta <= k / n <= b + delta``.

    Evaluated with the same float comparisons as the literal constraint so
    that rounding never disagrees with a direct check.
    """
    lo_t, hi_t = b - delta, b + delta
    lo = max(0, math.ceil(lo_t * n))
    while lo > 0 and (lo - 1) / n >= lo_t:
        lo -= 1
    while lo <= n and lo / n < lo_t:
        lo += 1
    hi = min(n, math.floor(hi_t * n))
    while hi < n and (hi + 1) / n <= hi_t:
        hi += 1
    while hi >= 0 and hi / n > hi_t:
        hi -= 1
    return lo, hi


def min_retained(xi: float, n_pos: int) -> int:
    """Smallest count p with ``p >= xi * n_pos``."""
    p = max(0, math.ceil(xi * n_pos))
    while p > 0 and p - 1 >= xi * n_pos:
        p -= 1
    while p < xi * n_pos:
        p += 1
    return p


@dataclass
class InferenceProblem:
    c0: np.ndarray
    c1: np.ndarray
    p_mask: np.ndarray
    b: float
    delta: float = 0.001
    xi: float = 1.0

    def __post_init__(self):
        self.c0 = np.asarray(self.c0, dtype=float)
        self.c1 = np.asarray(self.c1, dtype=float)
        self.p_mask = np.asarray(self.p_mask, dtype=bool)
        if not len(self.c0) == len(self.c1) == len(self.p_mask):
            raise ValueError("c0, c1 and p_mask must have equal length")
        if len(self.c0) == 0:
            raise ValueError("empty inference problem")
        if not 0 < self.b < 1:
            raise ValueError(f"entity ratio b must lie in (0, 1), got {self.b}")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if not 0.99 <= self.xi <= 1:
            raise ValueError("xi must lie in [0.99, 1]")
        if not (np.all(np.isfinite(self.c0)) and np.all(np.isfinite(self.c1))):
            raise ValueError("scores must be finite")

    @property
    def n_tokens(self) -> int:
        return len(self.c0)


@dataclass
class InferenceSolution:
    y: np.ndarray
    objective: float
    n_positive: int = field(init=False)

    def __post_init__(self):
        self.n_positive = int(self.y.sum())


def objective_value(c0, c1, y) -> float:
    """Exactly rounded objective of an assignment (order independent)."""
    y = np.asarray(y, dtype=bool)
    return math.fsum(np.where(y, c1, c0).tolist())


def solve_inference(prob: InferenceProblem) -> InferenceSolution:
    """Exact maximizer of the binary relabeling program.

    With ``p`` annotated tokens kept positive and ``j`` negatives promoted,
    the best choice for fixed (p, j) takes the largest margins ``c1 - c0``
    in each group, and for fixed p the best j clamps the number of
    positive-margin negatives into the feasible window. Every feasible p
    is tried. Equal margins are broken by ascending token index; equal
    objectives prefer keeping more annotated tokens.
    """
    n = prob.n_tokens
    lo, hi = count_window(prob.b, prob.delta, n)
    margins = prob.c1 - prob.c0
    p_idx = np.flatnonzero(prob.p_mask)
    n_idx = np.flatnonzero(~prob.p_mask)
    # stable sort on -margin keeps ascending index among ties
    p_order = p_idx[np.argsort(-margins[p_idx], kind="stable")]
    n_order = n_idx[np.argsort(-margins[n_idx], kind="stable")]
    n_gain = int((margins[n_idx] > 0).sum())
    p_min = min_retained(prob.xi, len(p_idx))

    best = None
    for p in range(len(p_idx), p_min - 1, -1):
        j_lo, j_hi = max(0, lo - p), min(len(n_idx), hi - p)
        if j_lo > j_hi:
            continue
        j = min(max(n_gain, j_lo), j_hi)
        y = np.zeros(n, dtype=np.int8)
        y[p_order[:p]] = 1
        y[n_order[:j]] = 1
        obj = objective_value(prob.c0, prob.c1, y)
        if best is None or obj > best.objective:
            best = InferenceSolution(y, obj)
    if best is None:
        if hi < p_min:
            raise InfeasibleInferenceError(
                f"ratio upper bound allows at most {hi} positives but the P-retention "
                f"constraint requires at least {p_min} (xi={prob.xi}, |P|={len(p_idx)})")
        raise InfeasibleInferenceError(
            f"ratio window [{prob.b - prob.delta:.6g}, {prob.b + prob.delta:.6g}] admits no "
            f"positive count for |T|={n}")
    return best


# -- weight assignment ------------------------------------------------------

def assign_weights_inner(solution: InferenceSolution, conf_o) -> list[np.ndarray]:
    """1 for tokens the inference step labelled positive, P(O|x) otherwise."""
    lengths = [len(c) for c in conf_o]
    flat = flatten(conf_o)
    if len(flat) != len(solution.y):
        raise ValueError("confidence vector and solution differ in length")
    return unflatten(np.where(solution.y == 1, 1.0, flat).astype(float), lengths)


def assign_weights_final(pa, conf_o) -> list[np.ndarray]:
    """1 for annotated tokens, P(O|x) for every default negative."""
    return [np.where(m, 1.0, np.asarray(c, dtype=float)) for m, c in zip(_masks(pa), conf_o, strict=True)]


def confidence_outside(model, X) -> list[np.ndarray]:
    """Probability of the outside label per token from a fitted tagger."""
    check_is_fitted(model)
    if OUTSIDE not in model.classes_:
        raise ValueError("model has no outside label")
    k = list(model.classes_).index(OUTSIDE)
    return [p[:, k] for p in model.predict_proba(X)]


def confidence_O(model, X) -> list[np.ndarray]:
    """P(O|x) from a binary {O, ENT} classifier."""
    if sorted(model.classes_) != sorted([OUTSIDE, ENTITY]):
        raise ValueError(f"expected a binary O/ENT model, got labels {model.classes_}")
    return confidence_outside(model, X)


# -- the loop ---------------------------------------------------------------

@dataclass
class CblConfig:
    b_target: float = 0.15
    delta: float = 0.001
    xi: float = 1.0
    b_step: float = 0.0025
    max_iterations: int = 50
    initializer: str = "raw"
    log_scale: bool = False
    balance_target: float | None = None

    def __post_init__(self):
        if not 0 < self.b_target < 1:
            raise ValueError("b_target must lie in (0, 1)")
        if self.b_step <= 0:
            raise ValueError("b_step must be positive")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if not 0.99 <= self.xi <= 1:
            raise ValueError("xi must lie in [0.99, 1]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    @property
    def balance_to(self) -> float:
        return self.b_target if self.balance_target is None else self.balance_target


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    b: float
    positives_required: int
    positives_selected: int
    objective: float
    weighted_ratio: float


LOG_COLUMNS = ("iter", "b", "positives_required", "positives_selected", "objective", "weighted_ratio")


def format_log(records) -> str:
    lines = ["\t".join(LOG_COLUMNS)]
    for r in records:
        lines.append(f"{r.iteration}\t{r.b:.6f}\t{r.positives_required}\t{r.positives_selected}"
                     f"\t{r.objective:.9g}\t{r.weighted_ratio:.9g}")
    return "\n".join(lines) + "\n"


def _weighted_ratio(masks, weights) -> float:
    n_pos = sum(int(m.sum()) for m in masks)
    neg = sum(float(v[~m].sum()) for v, m in zip(weights, masks))
    return n_pos / (n_pos + neg) if n_pos + neg else 0.0


def cbl_phase1(pa, cfg: CblConfig, trainer=None, init_weights=None):
    """Train the binary detector; returns ``(classifier, records, conf_O)``.

    ``trainer`` is an unfitted estimator, cloned every round. The returned
    confidences are the last classifier's P(O|x) on the training tokens.
    """
    pa = as_partial(pa)
    X = pa.corpus.X
    p_mask = pa.p_mask
    n_tokens = pa.n_tokens
    if n_tokens == 0:
        raise ValueError("empty training corpus")
    n_pos = pa.n_positive
    if trainer is None:
        trainer = WeightedPerceptronTagger()
    trainer = clone(trainer).set_params(labels=[OUTSIDE, ENTITY])

    if init_weights is None:
        weights = initial_weights(pa, cfg.initializer, cfg.log_scale)
    else:
        weights = check_sample_weight(init_weights, X)
    positive = [m.copy() for m in p_mask]
    required = math.floor(cfg.b_target * n_tokens)
    b0 = n_pos / n_tokens
    flat_p = flatten(p_mask).astype(bool)
    records = []
    model = conf = None

    for t in range(cfg.max_iterations):
        b = b0 + t * cfg.b_step
        if b >= 1:
            break
        labels = [[ENTITY if f else OUTSIDE for f in m] for m in positive]
        train_w = weights
        if any((~m).any() for m in positive) and sum(float(v[~m].sum()) for v, m in zip(weights, positive)) > 0:
            train_w = balance(weights, positive, cfg.balance_to)
        model = clone(trainer).fit(X, labels, sample_weight=train_w)
        conf = confidence_O(model, X)
        flat_conf = flatten(conf)
        c0 = np.log(np.clip(flat_conf, _LOG_FLOOR, 1.0))
        c1 = np.log(np.clip(1.0 - flat_conf, _LOG_FLOOR, 1.0))
        try:
            sol = solve_inference(InferenceProblem(c0, c1, flat_p, b, cfg.delta, cfg.xi))
        except InfeasibleInferenceError as exc:
            raise InfeasibleInferenceError(f"iteration {t + 1}: {exc}") from exc
        positive = [m.astype(bool) for m in unflatten(sol.y, [len(w) for w in X])]
        weights = assign_weights_inner(sol, conf)
        rec = IterationRecord(t + 1, b, required, sol.n_positive, sol.objective,
                              _weighted_ratio(positive, weights))
        records.append(rec)
        log.info("cbl iter %d b=%.4f selected=%d required=%d", rec.iteration, b,
                 rec.positives_selected, required)
        if sol.n_positive >= required:
            break
    return model, records, conf


def cbl_phase2(pa, conf_o, final_trainer, balance_to: float | None = None):
    """Train the multiclass tagger on the original partial labels with
    weights P(O|x) on the default negatives. Returns ``(model, weights)``."""
    pa = as_partial(pa)
    weights = assign_weights_final(pa, conf_o)
    if balance_to is not None:
        weights = balance(weights, pa, balance_to)
    model = clone(final_trainer).fit(pa.corpus.X, pa.corpus.y, sample_weight=weights)
    return model, weights


class ConstrainedBinaryLearner(BaseEstimator):
    """Estimator wrapper around phase 1 that exposes the final token weights.

    ``fit(X, y)`` runs the train-predict-infer loop on the partial labels
    ``y`` (any non-``"O"`` label counts as annotated). ``transform(X, y)``
    returns one weight array per sentence: 1 on annotated tokens and the
    detector's P(O|x) elsewhere.
    """

    def __init__(self, estimator=None, b_target=0.15, delta=0.001, xi=1.0, b_step=0.0025,
                 max_iter=50, init="raw", log_scale=False, balance_target=None):
        self.estimator = estimator
        self.b_target = b_target
        self.delta = delta
        self.xi = xi
        self.b_step = b_step
        self.max_iter = max_iter
        self.init = init
        self.log_scale = log_scale
        self.balance_target = balance_target

    def _config(self) -> CblConfig:
        return CblConfig(b_target=self.b_target, delta=self.delta, xi=self.xi, b_step=self.b_step,
                         max_iterations=self.max_iter, initializer=self.init,
                         log_scale=self.log_scale, balance_target=self.balance_target)

    def fit(self, X, y, sample_weight=None):
        X, y = check_sequences(X, y)
        corpus = Corpus.from_lists(X, _as_bio(y))
        est = self.estimator if self.estimator is not None else WeightedPerceptronTagger()
        self.classifier_, self.iteration_log_, self.train_conf_ = cbl_phase1(
            corpus, self._config(), est, init_weights=sample_weight)
        self.n_iter_ = len(self.iteration_log_)
        return self

    def transform(self, X, y):
        check_is_fitted(self, "classifier_")
        X, y = check_sequences(X, y)
        conf = confidence_O(self.classifier_, X)
        masks = [np.array([t != OUTSIDE for t in tags]) for tags in y]
        return assign_weights_final(masks, conf)

    def fit_transform(self, X, y, sample_weight=None):
        return self.fit(X, y, sample_weight).transform(X, y)


def _as_bio(y):
    """Map arbitrary entity labels onto valid BIO so a Corpus can hold them."""
    out = []
    for tags in y:
        row = []
        for t in tags:
            if t == OUTSIDE or t[:2] in ("B-", "I-"):
                row.append(t)
            else:
                row.append("B-" + t)
        out.append(row)
    return [repair_bio(r) for r in out]


class CBLTagger(BaseEstimator):
    """Both phases end to end: a multiclass tagger trained with CBL weights.

    Parameters
    ----------
    detector : estimator, optional
        Binary model for phase 1 (default: weighted perceptron).
    tagger : estimator, optional
        Multiclass model for phase 2 (default: weighted perceptron).
    balance_final : bool, default=True
        Rebalance the phase-2 weights to the target entity ratio.
    Remaining parameters are forwarded to :class:`ConstrainedBinaryLearner`.
    """

    def __init__(self, detector=None, tagger=None, b_target=0.15, delta=0.001, xi=1.0,
                 b_step=0.0025, max_iter=50, init="raw", log_scale=False,
                 balance_target=None, balance_final=True):
        self.detector = detector
        self.tagger = tagger
        self.b_target = b_target
        self.delta = delta
        self.xi = xi
        self.b_step = b_step
        self.max_iter = max_iter
        self.init = init
        self.log_scale = log_scale
        self.balance_target = balance_target
        self.balance_final = balance_final

    def fit(self, X, y):
        X, y = check_sequences(X, y)
        learner = ConstrainedBinaryLearner(
            self.detector, self.b_target, self.delta, self.xi, self.b_step, self.max_iter,
            self.init, self.log_scale, self.balance_target)
        learner.fit(X, y)
        self.learner_ = learner
        corpus = Corpus.from_lists(X, y)
        target = self.b_target if self.balance_target is None else self.balance_target
        tagger = self.tagger if self.tagger is not None else WeightedPerceptronTagger()
        self.model_, self.weights_ = cbl_phase2(
            corpus, learner.train_conf_, tagger, target if self.balance_final else None)
        self.classes_ = self.model_.classes_
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict(X)
