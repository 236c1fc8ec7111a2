"""End-to-end experiment runner.

A run perturbs a gold training corpus, trains one tagger per requested
baseline row, predicts the test corpus and scores every prediction file.
All artifacts go under ``out_dir``; every score in the report is
recomputed from the files just written.

Seeds: the 64-bit ``seed`` feeds ``numpy.random.SeedSequence`` and
``spawn(len(STAGES))`` yields one child per entry of ``STAGES`` in order.
Each child's first 32-bit word of ``generate_state`` is that stage's seed.
Every row reuses the same detector and tagger seeds, so rows differ only
in their instance weights.
"""
from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .cbl import CblConfig, ConstrainedBinaryLearner, balance, cbl_phase2, format_log
from .corpus import Corpus, entity_ratio, read_conll, span_f1, write_conll, write_weights
from .features import read_clusters
from .models import DEFAULT_PARAMS, MODELS, make_tagger
from .perturb import PerturbConfig, perturb
from .synthetic import make_dataset
from .weighting import (combined_weights, default_log_scale, initial_weights, oracle_weights,
                        raw_weights, read_counts)

log = logging.getLogger(__name__)

STAGES = ("data", "perturb", "detector", "tagger")
ROWS = ("raw", "combined", "cbl-raw", "cbl-combined", "oracle")
ROW_NAMES = {"raw": "Raw", "combined": "Combined", "cbl-raw": "CBL-Raw",
             "cbl-combined": "CBL-Combined", "oracle": "Oracle"}

DEFAULTS = {
    "train": "",
    "test": "",
    "partial": "",
    "clusters": "",
    "synthetic": "off",
    "n_train": "2000",
    "n_test": "600",
    "n_names": "300",
    "out_dir": "",
    "seed": "0",
    "precision": "0.9",
    "recall": "0.5",
    "model": "perceptron",
    "rows": ",".join(ROWS),
    "log_scale": "auto",
    "counts": "",
    "b_target": "gold",
    "b_step": "0.0025",
    "delta": "0.001",
    "xi": "1.0",
    "max_iters": "50",
    "balance_final": "auto",
    **{k: str(v) for k, v in DEFAULT_PARAMS.items()},
}


class ConfigError(ValueError):
    pass


def parse_config(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> dict[str, str]:
    cfg = dict(DEFAULTS)
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            cfg.update(parse_config(fh.read()))
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}")
        cfg[key] = str(value)
    return cfg


def _flag(value: str, key: str) -> bool:
    if value in ("on", "true", "1", "yes"):
        return True
    if value in ("off", "false", "0", "no"):
        return False
    raise ConfigError(f"{key}: expected on/off, got {value!r}")


def _number(cfg, key, kind=float):
    try:
        return kind(cfg[key])
    except ValueError:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {cfg[key]!r}") from None


def parse_b_target(text: str, gold: Corpus | None) -> float:
    """``gold`` (true ratio of the gold corpus), ``flat:x`` or a number."""
    if text == "gold":
        if gold is None:
            raise ConfigError("b_target=gold needs a gold training corpus")
        return entity_ratio(gold)
    value = text[5:] if text.startswith("flat:") else text
    try:
        b = float(value)
    except ValueError:
        raise ConfigError(f"b_target: expected gold, flat:<x> or a number, got {text!r}") from None
    if not 0 < b < 1:
        raise ConfigError("b_target must lie in (0, 1)")
    return b


def stage_seeds(seed: int) -> dict[str, int]:
    children = np.random.SeedSequence(seed).spawn(len(STAGES))
    return {name: int(c.generate_state(1)[0]) for name, c in zip(STAGES, children)}


@dataclass
class Settings:
    """Validated view of a raw config dict."""
    raw: dict
    seed: int
    model: str
    rows: list
    synthetic: bool
    log_scale: bool
    balance_final: bool
    precision: float
    recall: float
    b_step: float
    delta: float
    xi: float
    max_iters: int
    params: dict = field(default_factory=dict)


def validate(cfg: dict) -> Settings:
    """Check every key and input path; raises before any stage runs."""
    for key in cfg:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}")
    if not cfg["out_dir"]:
        raise ConfigError("out_dir is required")
    model = cfg["model"]
    if model not in MODELS:
        raise ConfigError(f"model: expected one of {MODELS}, got {model!r}")
    rows = [r.strip() for r in cfg["rows"].split(",") if r.strip()]
    bad = [r for r in rows if r not in ROWS]
    if bad or not rows:
        raise ConfigError(f"rows: unknown or empty {bad}; expected a subset of {ROWS}")
    synthetic = _flag(cfg["synthetic"], "synthetic")
    if not synthetic:
        if not cfg["test"]:
            raise ConfigError("test is required unless synthetic=on")
        if not cfg["train"] and not cfg["partial"]:
            raise ConfigError("train or partial is required unless synthetic=on")
    for key in ("train", "test", "partial", "clusters", "counts"):
        if cfg[key] and not os.path.isfile(cfg[key]):
            raise ConfigError(f"{key}: no such file {cfg[key]!r}")
    has_gold = synthetic or bool(cfg["train"])
    if "oracle" in rows and not has_gold:
        raise ConfigError("the oracle row needs the gold training corpus (train=...)")
    if cfg["b_target"] == "gold" and not has_gold:
        raise ConfigError("b_target=gold needs the gold training corpus (train=...)")
    if cfg["b_target"] != "gold":
        parse_b_target(cfg["b_target"], None)
    bf = cfg["balance_final"]
    balance_final = (model == "perceptron") if bf == "auto" else _flag(bf, "balance_final")
    settings = Settings(
        raw=dict(cfg), seed=_number(cfg, "seed", int), model=model, rows=rows,
        synthetic=synthetic,
        log_scale=(default_log_scale(model) if cfg["log_scale"] == "auto"
                   else _flag(cfg["log_scale"], "log_scale")),
        balance_final=balance_final, precision=_number(cfg, "precision"),
        recall=_number(cfg, "recall"), b_step=_number(cfg, "b_step"),
        delta=_number(cfg, "delta"), xi=_number(cfg, "xi"),
        max_iters=_number(cfg, "max_iters", int),
        params={k: _number(cfg, k, int if isinstance(v, int) else float)
                for k, v in DEFAULT_PARAMS.items()})
    if not 0 <= settings.seed < 2 ** 64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    for key in ("n_train", "n_test", "n_names"):
        _number(cfg, key, int)
    try:
        PerturbConfig(settings.precision, settings.recall)
        CblConfig(b_step=settings.b_step, delta=settings.delta, xi=settings.xi,
                  max_iterations=settings.max_iters)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    for key, value in settings.params.items():
        if value < 0 or (value == 0 and key != "crf_l2"):
            raise ConfigError(f"{key} must be positive, got {value}")
    return settings


@dataclass
class RowResult:
    row: str
    precision: float
    recall: float
    f1: float
    iterations: int | None = None


@dataclass
class ExperimentReport:
    config: dict
    seeds: dict
    b_target: float
    perturbation: dict | None
    rows: list
    iterations: dict
    timings: dict

    def table(self) -> str:
        lines = ["row\tprecision\trecall\tf1"]
        for r in self.rows:
            lines.append(f"{ROW_NAMES[r.row]}\t{100 * r.precision:.2f}\t{100 * r.recall:.2f}"
                         f"\t{100 * r.f1:.2f}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "seeds": self.seeds,
            "b_target": self.b_target,
            "perturbation": self.perturbation,
            "rows": [vars(r) for r in self.rows],
            "iterations": self.iterations,
        }


def _write(path, data: bytes) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(data)


def run_pipeline(config_path=None, overrides: dict | None = None) -> ExperimentReport:
    """Run every stage named by the config and write all artifacts.

    Re-running with the same config reproduces every artifact byte for
    byte; wall-clock times are kept apart in ``timings.tsv``.
    """
    cfg = load_config(config_path, overrides)
    s = validate(cfg)
    out = cfg["out_dir"]
    seeds = stage_seeds(s.seed)
    timings = {}
    clusters = read_clusters(cfg["clusters"]) if cfg["clusters"] else None
    counts = read_counts(cfg["counts"]) if cfg["counts"] else None

    t0 = time.perf_counter()
    if s.synthetic:
        gold, test = make_dataset(int(cfg["n_train"]), int(cfg["n_test"]), seed=seeds["data"],
                                  n_names=int(cfg["n_names"]))
        _write(os.path.join(out, "train.gold.conll"), write_conll(gold))
        _write(os.path.join(out, "test.gold.conll"), write_conll(test))
        test_path = os.path.join(out, "test.gold.conll")
    else:
        gold = read_conll(cfg["train"]) if cfg["train"] else None
        test = read_conll(cfg["test"])
        test_path = cfg["test"]
    timings["data"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    partial_path = os.path.join(out, "partial.conll")
    perturbation = None
    if cfg["partial"]:
        partial = read_conll(cfg["partial"])
        _write(partial_path, write_conll(partial))
    else:
        partial, _, _ = perturb(gold, PerturbConfig(s.precision, s.recall, seed=seeds["perturb"]))
        _write(partial_path, write_conll(partial))
    partial = read_conll(partial_path)
    if gold is not None:
        sc = span_f1(gold, partial)
        perturbation = {"precision": sc.precision, "recall": sc.recall}
    timings["perturb"] = time.perf_counter() - t0

    b_target = parse_b_target(cfg["b_target"], gold)
    X, y = partial.X, partial.y
    results, iterations = [], {}
    for row in s.rows:
        t0 = time.perf_counter()
        tagger = make_tagger(s.model, seeds["tagger"], s.params, clusters)
        if row in ("raw", "combined", "oracle"):
            if row == "raw":
                weights = raw_weights(partial)
            else:
                weights = (combined_weights(partial, s.log_scale, counts) if row == "combined"
                           else oracle_weights(partial, gold))
                if s.balance_final:
                    weights = balance(weights, partial, b_target)
            model = tagger.fit(X, y, sample_weight=weights)
        else:
            init = "raw" if row == "cbl-raw" else "combined"
            learner = ConstrainedBinaryLearner(
                make_tagger(s.model, seeds["detector"], s.params, clusters, detector=True),
                b_target=b_target, delta=s.delta, xi=s.xi, b_step=s.b_step,
                max_iter=s.max_iters).fit(
                    X, y, sample_weight=initial_weights(partial, init, s.log_scale, counts))
            _write(os.path.join(out, "logs", f"{row}.tsv"),
                   format_log(learner.iteration_log_).encode("utf-8"))
            model, weights = cbl_phase2(partial, learner.train_conf_, tagger,
                                        b_target if s.balance_final else None)
            last = learner.iteration_log_[-1]
            iterations[row] = {"iterations": learner.n_iter_, "final_b": last.b,
                               "positives_selected": last.positives_selected,
                               "positives_required": last.positives_required}
        _write(os.path.join(out, "weights", f"{row}.tsv"), write_weights(weights))
        model_path = os.path.join(out, "models", f"{row}.json")
        os.makedirs(os.path.dirname(model_path), exist_ok=True)
        model.save(model_path)
        pred_path = os.path.join(out, "predictions", f"{row}.conll")
        _write(pred_path, write_conll(test.with_tags(model.predict(test.X))))
        sc = span_f1(read_conll(test_path), read_conll(pred_path))
        results.append(RowResult(row, sc.precision, sc.recall, sc.f1,
                                 iterations.get(row, {}).get("iterations")))
        timings[row] = time.perf_counter() - t0
        log.info("%s: F1=%.2f (%.1fs)", ROW_NAMES[row], 100 * sc.f1, timings[row])

    report = ExperimentReport(cfg, seeds, b_target, perturbation, results, iterations, timings)
    _write(os.path.join(out, "report.tsv"), report.table().encode("utf-8"))
    _write(os.path.join(out, "report.json"),
           (json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n").encode("utf-8"))
    _write(os.path.join(out, "timings.tsv"),
           ("stage\tseconds\n" + "".join(f"{k}\t{v:.3f}\n" for k, v in timings.items())).encode())
    return report
