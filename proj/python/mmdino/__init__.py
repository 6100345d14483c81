"""Python bindings for the mmdino C++ core."""

import json as _json

from ._core import (
    Config,
    ConfigError,
    DataError,
    Dataset,
    Error,
    Model,
    PreconditionError,
    ShapeError,
    auroc,
    ema_momentum_at,
    f1,
    git_describe,
    lr_at,
    mcc,
    pretrain,
    synth,
    teacher_temp_at,
)
from ._core import evaluate_json as _evaluate_json


def evaluate(run, data, missing_seed=None, missing_mode="remove"):
    """Fit the linear probe for a trained run and score the test splits.

    Returns {"internal": report, "external": report}; "external" is absent
    when the dataset has no external split.
    """
    return _json.loads(_evaluate_json(str(run), str(data), missing_seed, missing_mode))


__all__ = [
    "Config",
    "ConfigError",
    "DataError",
    "Dataset",
    "Error",
    "Model",
    "PreconditionError",
    "ShapeError",
    "auroc",
    "ema_momentum_at",
    "evaluate",
    "f1",
    "git_describe",
    "lr_at",
    "mcc",
    "pretrain",
    "synth",
    "teacher_temp_at",
]
