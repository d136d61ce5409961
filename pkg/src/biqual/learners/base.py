"""Shared probabilistic-model contract and probability handling."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

__all__ = ["ProbabilisticModel", "PROB_CLIP", "clip_probabilities", "save_model", "load_model"]

# Floor applied to predicted probabilities before any downstream ratio; the
# reweighting formulas divide by them.
PROB_CLIP = 1e-6


def clip_probabilities(p: np.ndarray, eps: float = PROB_CLIP) -> np.ndarray:
    return np.clip(p, eps, 1.0 - eps)


class ProbabilisticModel:
    """Contract: ``fit(X, y, sample_weight)`` then ``predict_proba(X)``.

    ``predict_proba`` returns one probability vector of length ``n_classes_``
    per row, nonnegative and summing to 1, and is deterministic after fit.
    """

    n_classes_: int
    flags: tuple[str, ...] = ()

    def fit(self, features, labels, sample_weight=None, n_classes=None):
        raise NotImplementedError

    def predict_proba(self, features) -> np.ndarray:
        raise NotImplementedError

    def predict(self, features) -> np.ndarray:
        return np.argmax(self.predict_proba(features), axis=1)

    def to_dict(self) -> dict:
        raise NotImplementedError


def _registry() -> dict:
    from .tree import DecisionTree
    from .boosting import GradientBoostedTrees
    from .calibration import CalibratedModel

    return {
        "decision-tree": DecisionTree,
        "gradient-boosted-trees": GradientBoostedTrees,
        "calibrated": CalibratedModel,
    }


def save_model(model: ProbabilisticModel, path: str | Path) -> None:
    """Serialize a fitted model to self-describing JSON."""
    Path(path).write_text(json.dumps(model.to_dict()) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> ProbabilisticModel:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    kind = payload.get("kind")
    registry = _registry()
    if kind not in registry:
        raise ValueError(f"unknown model kind {kind!r}")
    return registry[kind].from_dict(payload)
