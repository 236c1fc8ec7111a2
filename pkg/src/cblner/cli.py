"""Command-line interface.

Every subcommand exits 0 on success. Failures print a single line
``error: <kind>: <message>`` to stderr and exit 1 (2 for bad usage).
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .cbl import ConstrainedBinaryLearner, balance, format_log
from .corpus import (ConllFormatError, TokenizationMismatchError, read_conll, read_weights,
                     span_f1, write_conll, write_weights)
from .features import read_clusters
from .models import DEFAULT_PARAMS, MODELS, load_model, make_tagger
from .perturb import PerturbConfig, perturb
from .weighting import SCHEMES, default_log_scale, initial_weights, read_counts


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected on or off, got {value!r}")
    return value == "on"


def _key_value(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def _model_params(pairs) -> dict:
    params = {}
    for key, value in pairs or ():
        if key not in DEFAULT_PARAMS:
            raise ValueError(f"unknown model parameter {key!r}; expected one of {sorted(DEFAULT_PARAMS)}")
        params[key] = type(DEFAULT_PARAMS[key])(value)
    return params


def _write_bytes(path, data: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(data)


# -- subcommands ------------------------------------------------------------

def cmd_perturb(args) -> None:
    gold = read_conll(args.input)
    partial, p, r = perturb(gold, PerturbConfig(args.precision, args.recall, seed=args.seed))
    _write_bytes(args.out, write_conll(partial))
    print(f"precision={p:.2f}\trecall={r:.2f}")


def cmd_weights_init(args) -> None:
    partial = read_conll(args.train)
    counts = read_counts(args.counts) if args.counts else None
    weights = initial_weights(partial, args.scheme, args.log_scale, counts)
    _write_bytes(args.out, write_weights(weights))


def cmd_cbl(args) -> None:
    partial = read_conll(args.train)
    gold = read_conll(args.gold) if args.gold else None
    b_target = pipeline.parse_b_target(args.b_target, gold)
    clusters = read_clusters(args.clusters) if args.clusters else None
    log_scale = default_log_scale(args.model) if args.log_scale is None else args.log_scale
    if args.weights_init in SCHEMES:
        counts = read_counts(args.counts) if args.counts else None
        init_weights = initial_weights(partial, args.weights_init, log_scale, counts)
    else:
        init_weights = read_weights(args.weights_init, partial)
    detector = make_tagger(args.model, args.seed, _model_params(args.param), clusters, detector=True)
    learner = ConstrainedBinaryLearner(
        detector, b_target=b_target, delta=args.delta, xi=args.xi, b_step=args.b_step,
        max_iter=args.max_iters, balance_target=args.balance_target)
    learner.fit(partial.X, partial.y, sample_weight=init_weights)
    weights = learner.transform(partial.X, partial.y)
    _write_bytes(args.out_weights, write_weights(weights))
    if args.out_model:
        learner.classifier_.save(args.out_model)
    if args.log:
        _write_bytes(args.log, format_log(learner.iteration_log_).encode("utf-8"))
    last = learner.iteration_log_[-1]
    print(f"iterations={learner.n_iter_}\tb={last.b:.4f}\tpositives={last.positives_selected}"
          f"\trequired={last.positives_required}")


def cmd_train(args) -> None:
    partial = read_conll(args.train)
    clusters = read_clusters(args.clusters) if args.clusters else None
    weights = read_weights(args.weights, partial) if args.weights else None
    if args.balance_to is not None:
        if weights is None:
            weights = initial_weights(partial, "raw")
        weights = balance(weights, partial, args.balance_to)
    model = make_tagger(args.model, args.seed, _model_params(args.param), clusters)
    model.fit(partial.X, partial.y, sample_weight=weights)
    model.save(args.out_model)


def cmd_predict(args) -> None:
    model = load_model(args.model)
    corpus = read_conll(args.input)
    _write_bytes(args.out, write_conll(corpus.with_tags(model.predict(corpus.X))))


def cmd_evaluate(args) -> None:
    s = span_f1(read_conll(args.gold), read_conll(args.pred))
    print(f"precision={100 * s.precision:.2f}\trecall={100 * s.recall:.2f}\tf1={100 * s.f1:.2f}")


def cmd_pipeline(args) -> None:
    overrides = {key: getattr(args, key) for key in pipeline.DEFAULTS
                 if getattr(args, key, None) is not None}
    report = pipeline.run_pipeline(args.config, overrides)
    sys.stdout.write(report.table())


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cblner", description="Train NER taggers from partial annotations.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("perturb", help="lower recall and precision of a gold corpus")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--precision", type=float, default=0.9)
    p.add_argument("--recall", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("weights-init", help="write initial instance weights")
    p.add_argument("--train", required=True)
    p.add_argument("--scheme", choices=SCHEMES, default="raw")
    p.add_argument("--log-scale", type=_on_off, default=False)
    p.add_argument("--counts", help="surface<TAB>count file overriding corpus counts")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_weights_init)

    p = sub.add_parser("cbl", help="run the constrained binary learning loop")
    p.add_argument("--train", required=True)
    p.add_argument("--weights-init", default="raw",
                   help=f"one of {', '.join(SCHEMES)} or a weights file")
    p.add_argument("--log-scale", type=_on_off,
                   help="log-scaled frequencies (default: on for crf, off for perceptron)")
    p.add_argument("--counts", help="surface<TAB>count file overriding corpus counts")
    p.add_argument("--model", choices=MODELS, default="perceptron")
    p.add_argument("--b-target", default="flat:0.15", help="gold, flat:<x> or a number")
    p.add_argument("--gold", help="gold training corpus, needed for --b-target gold")
    p.add_argument("--b-step", type=float, default=0.0025)
    p.add_argument("--delta", type=float, default=0.001)
    p.add_argument("--xi", type=float, default=1.0)
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--balance-target", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clusters")
    p.add_argument("--param", type=_key_value, action="append", metavar="KEY=VALUE")
    p.add_argument("--out-weights", required=True)
    p.add_argument("--out-model")
    p.add_argument("--log")
    p.set_defaults(func=cmd_cbl)

    p = sub.add_parser("train", help="train a tagger, optionally with instance weights")
    p.add_argument("--train", required=True)
    p.add_argument("--weights")
    p.add_argument("--balance-to", type=float)
    p.add_argument("--model", choices=MODELS, default="perceptron")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clusters")
    p.add_argument("--param", type=_key_value, action="append", metavar="KEY=VALUE")
    p.add_argument("--out-model", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="tag a corpus with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="span-level precision, recall and F1")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="run a full experiment from a config file")
    p.add_argument("--config")
    for key in pipeline.DEFAULTS:
        p.add_argument("--" + key.replace("_", "-"), dest=key)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    try:
        args.func(args)
    except (ConllFormatError, TokenizationMismatchError) as exc:
        print(f"error: format: {_one_line(exc)}", file=sys.stderr)
        return 1
    except pipeline.ConfigError as exc:
        print(f"error: config: {_one_line(exc)}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {_one_line(exc)}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 1
    return 0


def _one_line(exc) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
