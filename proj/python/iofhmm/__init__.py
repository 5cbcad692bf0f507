"""Input-output factorial hidden Markov models: simulation, inference and ROC evaluation."""

import json as _json

from . import _core
from ._core import (
    ConfigError,
    ConvergenceError,
    DataError,
    calibrate_simulation,
    forward_backward,
    roc_recovery,
    transition_prob,
)

__version__ = _core.__version__

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "DataError",
    "calibrate_simulation",
    "evaluate",
    "fit",
    "forward_backward",
    "generate_instance",
    "infer",
    "output_digests",
    "rerun",
    "roc_recovery",
    "simulate",
    "transition_prob",
]


def _dumps(obj):
    if obj is None:
        return ""
    return obj if isinstance(obj, str) else _json.dumps(obj)


def generate_instance(design, replicate=0):
    """Sample one replicate of a simulation design given as a dict."""
    return _core.generate_instance(_dumps(design), replicate)


def fit(Y, X, structure, family="tp-scaled", delta=None, priors=None, config=None):
    """Run inference on in-memory arrays.

    structure is a list of (row, chain) pairs giving the non-zeros of C.
    """
    return _core.fit(Y, X, [tuple(e) for e in structure], family, delta, _dumps(priors), _dumps(config))


def simulate(config, out):
    return _json.loads(_core.simulate(_dumps(config), str(out)))


def infer(data, out, config=None):
    return _json.loads(_core.infer(str(data), _dumps(config), str(out)))


def evaluate(results, truth, out):
    return _json.loads(_core.evaluate(str(results), str(truth), str(out)))


def rerun(manifest, out=None):
    return _json.loads(_core.rerun(str(manifest), None if out is None else str(out)))


def output_digests(path):
    return _json.loads(_core.output_digests(str(path)))
