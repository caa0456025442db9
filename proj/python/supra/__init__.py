"""Surgical phase recognition and anticipation on per-frame feature sequences."""

import json

import numpy as np

from . import _core
from ._core import ConfigError, DataError, NumericError

__all__ = [
    "ConfigError",
    "DataError",
    "Model",
    "NumericError",
    "cumulative_max",
    "default_config",
    "edit_score",
    "evaluate",
    "f1_overlap",
    "frame_metrics",
    "generate",
    "next_segment_labels",
    "normalize_config",
    "train",
]


def _text(config):
    if config is None:
        return ""
    return config if isinstance(config, str) else json.dumps(config)


def default_config():
    return json.loads(_core.default_config())


def normalize_config(config):
    """Fills defaults and validates; raises ConfigError."""
    return json.loads(_core.normalize_config(_text(config)))


def edit_score(pred, gt):
    return _core.edit_score(list(pred), list(gt))


def f1_overlap(pred, gt, threshold):
    return _core.f1_overlap(list(pred), list(gt), threshold)


def frame_metrics(pred, gt, n_classes):
    return json.loads(_core.frame_metrics(list(pred), list(gt), n_classes))


def next_segment_labels(gt, k, end_class):
    return _core.next_segment_labels(list(gt), k, end_class)


def cumulative_max(x):
    return _core.cumulative_max(np.asarray(x, dtype=np.float32))


def generate(out_dir, config=None):
    """Writes a synthetic dataset; returns the number of videos."""
    return _core.generate(_text(config), str(out_dir))


def train(manifest, run_dir, config=None, max_epochs=None, resume=None):
    ckpt, epochs, seconds = _core.train(
        _text(config), str(manifest), str(run_dir), max_epochs, None if resume is None else str(resume)
    )
    return {"checkpoint": str(ckpt), "epochs": epochs, "seconds": seconds}


def evaluate(checkpoint, manifest, split="test", batch=False):
    return json.loads(_core.evaluate(str(checkpoint), str(manifest), split, batch))


class Model:
    def __init__(self, config=None, seed=0, _handle=None):
        self._m = _handle if _handle is not None else _core.Model(_text(config), seed)

    @classmethod
    def load(cls, path):
        return cls(_handle=_core.Model.load(str(path)))

    @property
    def config(self):
        return json.loads(self._m.config())

    def parameter_count(self):
        return self._m.parameter_count()

    def parameter_names(self):
        return self._m.parameter_names()

    def predict(self, features, batch=False):
        """Per-frame phase, probabilities and next-segment predictions."""
        return self._m.predict(np.asarray(features, dtype=np.float32), batch)
