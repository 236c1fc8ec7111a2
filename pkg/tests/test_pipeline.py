import json
import os

import numpy as np
import pytest

from cblner.corpus import read_conll, read_weights, span_f1
from cblner.pipeline import (ConfigError, ROWS, load_config, parse_b_target, parse_config,
                             run_pipeline, stage_seeds, validate)

SMALL = {"synthetic": "on", "n_train": "200", "n_test": "60", "n_names": "40", "seed": "5",
         "perceptron_epochs": "2", "max_iters": "8", "b_step": "0.01"}


def _run(out, **extra):
    return run_pipeline(overrides={**SMALL, "out_dir": str(out), **extra})


def _files(root):
    found = {}
    for dirpath, _, names in os.walk(root):
        for name in names:
            path = os.path.join(dirpath, name)
            found[os.path.relpath(path, root)] = open(path, "rb").read()
    return found


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("full")
    return out, _run(out)


def test_report_has_all_rows(full_run):
    out, report = full_run
    assert [r.row for r in report.rows] == list(ROWS)
    table = (out / "report.tsv").read_text().splitlines()
    assert table[0] == "row\tprecision\trecall\tf1"
    assert [line.split("\t")[0] for line in table[1:]] == [
        "Raw", "Combined", "CBL-Raw", "CBL-Combined", "Oracle"]
    doc = json.loads((out / "report.json").read_text())
    assert doc["seeds"] == stage_seeds(5)
    assert set(doc["iterations"]) == {"cbl-raw", "cbl-combined"}


def test_report_scores_match_prediction_files(full_run):
    out, report = full_run
    gold = read_conll(out / "test.gold.conll")
    for r in report.rows:
        sc = span_f1(gold, read_conll(out / "predictions" / f"{r.row}.conll"))
        assert (sc.precision, sc.recall, sc.f1) == (r.precision, r.recall, r.f1)
    partial = read_conll(out / "partial.conll")
    sc = span_f1(read_conll(out / "train.gold.conll"), partial)
    assert report.perturbation == {"precision": sc.precision, "recall": sc.recall}


def test_oracle_row_uses_zero_one_rule(full_run, tmp_path):
    out, _ = full_run
    partial = read_conll(out / "partial.conll")
    gold = read_conll(out / "train.gold.conll")
    # the perceptron run balances; rerun unbalanced to see the raw rule
    _run(tmp_path, rows="oracle", balance_final="off")
    w = read_weights(tmp_path / "weights" / "oracle.tsv", partial)
    for v, ps, gs in zip(w, partial, gold):
        expect = [0.0 if (p == "O" and g != "O") else 1.0 for p, g in zip(ps.tags, gs.tags)]
        assert v.tolist() == expect
    balanced = read_weights(out / "weights" / "oracle.tsv", partial)
    assert all(set(np.unique(v)) <= {0.0, 1.0} | set(np.unique(v[v < 1])) for v in balanced)


def test_rerun_is_byte_identical(full_run, tmp_path):
    out, _ = full_run
    _run(tmp_path)
    a, b = _files(out), _files(tmp_path)
    a.pop("timings.tsv"), b.pop("timings.tsv")
    assert a.keys() == b.keys()
    # the config echo records out_dir, so compare the report without it
    ja, jb = (json.loads(d.pop("report.json")) for d in (a, b))
    ja["config"].pop("out_dir"), jb["config"].pop("out_dir")
    assert ja == jb
    for name in a:
        assert a[name] == b[name], name


def test_rows_are_isolated(full_run, tmp_path):
    out, _ = full_run
    raw_dir, comb_dir = tmp_path / "raw", tmp_path / "combined"
    _run(raw_dir, rows="raw")
    _run(comb_dir, rows="combined")
    a, b = _files(raw_dir), _files(comb_dir)
    for shared in ("train.gold.conll", "test.gold.conll", "partial.conll"):
        assert a[shared] == b[shared] == _files(out)[shared]
    assert a["weights/raw.tsv"] != b["weights/combined.tsv"]
    # a row run alone matches the same row inside the full run
    assert a["predictions/raw.conll"] == _files(out)["predictions/raw.conll"]
    assert b["models/combined.json"] == _files(out)["models/combined.json"]


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("# experiment\nsynthetic = on\nseed = 3\n\nmodel = crf\n")
    cfg = load_config(path, {"seed": "4"})
    assert cfg["seed"] == "4" and cfg["model"] == "crf" and cfg["synthetic"] == "on"
    assert parse_config("counts = a=b.tsv  # note\n") == {"counts": "a=b.tsv"}


@pytest.mark.parametrize("text, match", [
    ("colour = red\n", "unknown"),
    ("seed 3\n", "line 1"),
])
def test_config_parse_errors(tmp_path, text, match):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ConfigError, match=match):
        load_config(path)


@pytest.mark.parametrize("extra", [
    {"model": "svm"},
    {"rows": "raw,fancy"},
    {"synthetic": "off"},
    {"synthetic": "off", "test": "/nonexistent/test.conll"},
    {"clusters": "/nonexistent/paths.txt"},
    {"b_target": "flat:1.5"},
    {"delta": "-1"},
    {"xi": "0.5"},
    {"crf_epochs": "0"},
    {"seed": "abc"},
])
def test_invalid_config_fails_before_any_stage(tmp_path, extra):
    out = tmp_path / "out"
    with pytest.raises(ConfigError):
        run_pipeline(overrides={**SMALL, "out_dir": str(out), **extra})
    assert not out.exists()


def test_oracle_row_needs_gold(tmp_path):
    test = tmp_path / "test.conll"
    test.write_text("Bob B-PER\nran O\n")
    with pytest.raises(ConfigError, match="gold"):
        validate(load_config(None, {"test": str(test), "partial": str(test),
                                    "out_dir": str(tmp_path / "o"), "rows": "oracle",
                                    "b_target": "0.1"}))


def test_b_target_forms(full_run):
    out, _ = full_run
    gold = read_conll(out / "train.gold.conll")
    assert parse_b_target("flat:0.15", None) == 0.15
    assert parse_b_target("0.2", None) == 0.2
    assert 0.05 < parse_b_target("gold", gold) < 0.2
    with pytest.raises(ConfigError):
        parse_b_target("gold", None)


def test_stage_seeds_are_distinct_and_stable():
    s = stage_seeds(0)
    assert list(s) == ["data", "perturb", "detector", "tagger"]
    assert len(set(s.values())) == 4
    assert s == stage_seeds(0) and s != stage_seeds(1)
    # the documented rule: spawn one child per stage, take its first 32-bit word
    children = np.random.SeedSequence(0).spawn(4)
    assert list(s.values()) == [int(c.generate_state(1)[0]) for c in children]
