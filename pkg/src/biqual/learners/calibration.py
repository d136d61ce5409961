"""One-vs-rest isotonic probability calibration with cross-fitting."""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .base import ProbabilisticModel
from .isotonic import IsotonicMap, fit_isotonic

__all__ = ["CalibratedModel", "calibrate", "fit_calibrated", "stratified_fold_ids"]


class CalibratedModel(ProbabilisticModel):
    """Wraps a base model with one monotone map per class, then renormalizes.

    A ``None`` map leaves that class's probability unchanged (identity); rows
    whose remapped probabilities all vanish fall back to the uniform vector.
    """

    def __init__(self, base: ProbabilisticModel, maps: list[Optional[IsotonicMap]],
                 flags: tuple[str, ...] = ()):
        self.base = base
        self.maps = maps
        self.n_classes_ = base.n_classes_
        self.flags = flags

    def fit(self, features, labels, sample_weight=None, n_classes=None):
        raise RuntimeError("CalibratedModel wraps an already fitted base model")

    def predict_proba(self, features) -> np.ndarray:
        proba = np.asarray(self.base.predict_proba(features), dtype=np.float64)
        out = np.empty_like(proba)
        for k, iso in enumerate(self.maps):
            out[:, k] = proba[:, k] if iso is None else iso(proba[:, k])
        out = np.clip(out, 0.0, None)
        totals = out.sum(axis=1)
        dead = totals <= 0
        if np.any(dead):
            out[dead] = 1.0 / self.n_classes_
            totals[dead] = 1.0
        return out / totals[:, None]

    def to_dict(self) -> dict:
        return {
            "kind": "calibrated",
            "n_classes": self.n_classes_,
            "flags": list(self.flags),
            "maps": [None if m is None else m.to_dict() for m in self.maps],
            "base": self.base.to_dict(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "CalibratedModel":
        from .base import _registry

        base_payload = payload["base"]
        base = _registry()[base_payload["kind"]].from_dict(base_payload)
        maps = [None if m is None else IsotonicMap.from_dict(m) for m in payload["maps"]]
        return cls(base, maps, tuple(payload["flags"]))


def _fit_maps(proba: np.ndarray, labels: np.ndarray, weights: np.ndarray,
              n_classes: int) -> tuple[list[Optional[IsotonicMap]], tuple[str, ...]]:
    maps: list[Optional[IsotonicMap]] = []
    flags: list[str] = []
    for k in range(n_classes):
        if not np.any(labels == k):
            maps.append(None)
            flags.append(f"class_{k}_uncalibrated")
            continue
        target = (labels == k).astype(np.float64)
        maps.append(fit_isotonic(proba[:, k], target, weights))
    return maps, tuple(flags)


def calibrate(base: ProbabilisticModel, holdout, weights=None) -> CalibratedModel:
    """Calibrate a fitted model on a holdout Dataset (disjoint from training data).

    Classes absent from the holdout keep their raw probabilities and are
    flagged as uncalibrated.
    """
    w = np.ones(holdout.n_samples) if weights is None else np.asarray(weights, dtype=np.float64)
    proba = np.asarray(base.predict_proba(holdout.features), dtype=np.float64)
    maps, flags = _fit_maps(proba, holdout.labels, w, base.n_classes_)
    return CalibratedModel(base, maps, flags)


def stratified_fold_ids(labels: np.ndarray, n_folds: int, seed: int) -> np.ndarray:
    """Fold id per row; classes are dealt round-robin after a seeded shuffle."""
    rng = np.random.default_rng(seed)
    fold = np.empty(labels.shape[0], dtype=np.int64)
    for k in np.unique(labels):
        idx = np.flatnonzero(labels == k)
        idx = idx[rng.permutation(idx.size)]
        fold[idx] = np.arange(idx.size) % n_folds
    return fold


def fit_calibrated(dataset, learner_factory: Callable[[], ProbabilisticModel],
                   weights=None, n_folds: int = 3, seed: int = 0) -> ProbabilisticModel:
    """Cross-fitted isotonic calibration.

    Out-of-fold predictions from ``n_folds`` stratified refits provide the
    calibration data; the maps wrap one final model fitted on all rows.
    Datasets too small to cross-fit return the uncalibrated final model,
    flagged.
    """
    X, y = dataset.features, dataset.labels
    n = dataset.n_samples
    K = dataset.n_classes
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)

    final = learner_factory()
    final.fit(X, y, sample_weight=w, n_classes=K)
    if n < 2 * n_folds:
        final.flags = tuple(final.flags) + ("uncalibrated_small_data",)
        return final

    fold = stratified_fold_ids(y, n_folds, seed)
    oof = np.full((n, K), np.nan)
    for f in range(n_folds):
        train = fold != f
        if not np.any(train) or not np.any(~train):
            continue
        model = learner_factory()
        model.fit(X[train], y[train], sample_weight=w[train], n_classes=K)
        oof[~train] = model.predict_proba(X[~train])
    scored = ~np.isnan(oof[:, 0])
    if not np.any(scored):
        final.flags = tuple(final.flags) + ("uncalibrated_small_data",)
        return final
    maps, flags = _fit_maps(oof[scored], y[scored], w[scored], K)
    return CalibratedModel(final, maps, flags)
