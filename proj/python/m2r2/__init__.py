"""Python access to the M2R2 library: synthetic data, masking, metrics and
single protocol runs."""

import json

from . import _core
from ._core import ConfigError, Dataset, DatasetError, generate_synthetic, parse_grid

__all__ = [
    "ConfigError",
    "Dataset",
    "DatasetError",
    "default_config",
    "evaluate",
    "generate_synthetic",
    "grad_check",
    "parse_grid",
    "protocol_run",
]


def default_config():
    """The default experiment configuration as a dict."""
    return json.loads(_core.default_config())


def evaluate(preds, labels, classes):
    """Weighted accuracy/F1, per-class scores and the confusion matrix."""
    return json.loads(_core.evaluate(list(preds), list(labels), classes))


def grad_check(seed=0, seeds=20):
    """Runs the finite-difference gradient suite and returns its report."""
    return json.loads(_core.grad_check(seed, seeds))


def protocol_run(train, test, eta, seed, mode="full", config=None):
    """Masks both parts at `eta`, trains in the given mode and returns test metrics.

    `config` is a (partial) configuration dict overlaid on the defaults.
    """
    text = json.dumps(config) if config else ""
    return json.loads(_core.protocol_run(text, train, test, eta, seed, mode))
