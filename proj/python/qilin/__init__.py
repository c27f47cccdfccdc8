# Copyright 2026 The qilin-desk Authors
# SPDX-License-Identifier: Apache-2.0
"""Python bindings for the qilin desk-scale medical LM pipeline."""

import json as _json

try:
    from . import _qilin as _ext
except ImportError:  # build tree: the extension sits next to, not inside, the package
    import _qilin as _ext

Vocab = _ext.Vocab
QilinError = _ext.QilinError
ConfigError = _ext.ConfigError
InputError = _ext.InputError
ValidationError = _ext.ValidationError
LengthError = _ext.LengthError
IntegrityError = _ext.IntegrityError
EvaluationError = _ext.EvaluationError

bleu = _ext.bleu
rouge_n = _ext.rouge_n
rouge_l = _ext.rouge_l
accuracy = _ext.accuracy
weighted_f1 = _ext.weighted_f1
extract_choice = _ext.extract_choice
dedup = _ext.dedup
data_build = _ext.data_build
train = _ext.train
generate = _ext.generate


def validate_config(path):
    """Returns (config dict or None, errors, warnings)."""
    r = _ext.validate_config(str(path))
    cfg = _json.loads(r["config"]) if r["config"] is not None else None
    return cfg, list(r["errors"]), list(r["warnings"])


def evaluate(config, kind, checkpoint=None):
    """Runs eval mcq|dialogue and returns the report as a dict (metrics x100)."""
    return _json.loads(_ext.evaluate(str(config), kind,
                                     None if checkpoint is None else str(checkpoint)))


def checkpoint_info(path):
    info = dict(_ext.checkpoint_info(str(path)))
    info["config"] = _json.loads(info["config"])
    return info


__all__ = [
    "Vocab", "QilinError", "ConfigError", "InputError", "ValidationError",
    "LengthError", "IntegrityError", "EvaluationError", "bleu", "rouge_n",
    "rouge_l", "accuracy", "weighted_f1", "extract_choice", "dedup",
    "data_build", "train", "generate", "validate_config", "evaluate",
    "checkpoint_info",
]
