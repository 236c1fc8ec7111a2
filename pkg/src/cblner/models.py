"""Construction and loading of the two tagger families by name."""
from __future__ import annotations

import json

from .crf import FORMAT as CRF_FORMAT
from .crf import MarginalCRF
from .perceptron import FORMAT as PERCEPTRON_FORMAT
from .perceptron import WeightedPerceptronTagger

MODELS = ("perceptron", "crf")

# Hyperparameters used by the pipeline and CLI when none are given.
DEFAULT_PARAMS = {
    "perceptron_epochs": 5,
    "perceptron_learning_rate": 1.0,
    "crf_epochs": 10,
    "crf_detector_epochs": 5,
    "crf_learning_rate": 0.1,
    "crf_l2": 3.0,
    "crf_batch_size": 32,
}


def make_tagger(kind: str, seed: int | None = None, params: dict | None = None,
                clusters=None, detector: bool = False):
    """Unfitted tagger of family ``kind``.

    ``detector=True`` selects the settings for the binary phase-1 model,
    which for the CRF trains for fewer epochs.
    """
    p = dict(DEFAULT_PARAMS)
    if params:
        unknown = set(params) - set(DEFAULT_PARAMS)
        if unknown:
            raise ValueError(f"unknown model parameters: {sorted(unknown)}")
        p.update(params)
    if kind == "perceptron":
        return WeightedPerceptronTagger(n_epochs=int(p["perceptron_epochs"]),
                                        learning_rate=float(p["perceptron_learning_rate"]),
                                        clusters=clusters, random_state=seed)
    if kind == "crf":
        epochs = p["crf_detector_epochs"] if detector else p["crf_epochs"]
        return MarginalCRF(n_epochs=int(epochs), learning_rate=float(p["crf_learning_rate"]),
                           l2=float(p["crf_l2"]), batch_size=int(p["crf_batch_size"]),
                           clusters=clusters, random_state=seed)
    raise ValueError(f"unknown model {kind!r}; expected one of {MODELS}")


def load_model(path):
    """Read a model saved by either tagger's ``save``."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not a model file ({exc.msg})") from None
    fmt = doc.get("format") if isinstance(doc, dict) else None
    if fmt == PERCEPTRON_FORMAT:
        return WeightedPerceptronTagger.from_dict(doc)
    if fmt == CRF_FORMAT:
        return MarginalCRF.from_dict(doc)
    raise ValueError(f"{path}: unrecognized model format {fmt!r}")
