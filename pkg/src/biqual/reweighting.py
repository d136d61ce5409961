"""Importance-reweighting algorithms for biquality training, plus the baselines."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import BiqualityDataset, Dataset
from .density_ratio import KMMParams, WeightVector, kmm_weights, pdr_weights, source_labeled_set
from .learners.base import ProbabilisticModel, clip_probabilities
from .learners.calibration import fit_calibrated

__all__ = [
    "METHOD_NAMES",
    "ReweightingMethod",
    "ReweightedTrainingSet",
    "WEIGHT_CAP",
    "calibrated_trainer",
    "irbl_weights",
    "irbl2_weights",
    "kdr_weights",
    "kpdr_weights",
    "kkmm_weights",
    "compute_method_weights",
    "assemble_reweighted",
    "train_with_method",
]

METHOD_NAMES = ("IRBL", "IRBL2", "PDR", "K-PDR", "K-KMM", "NoCorrection", "TrustedOnly")

# Final untrusted weights are capped here; clipped-probability ratios can
# otherwise explode.
WEIGHT_CAP = 1000.0

# A trainer maps a Dataset to a fitted probabilistic model.
Trainer = Callable[[Dataset], ProbabilisticModel]


@dataclass(frozen=True)
class ReweightingMethod:
    """A named reweighting strategy plus its method-specific parameters."""

    name: str
    config: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.name not in METHOD_NAMES:
            raise ValueError(f"unknown method {self.name!r}; expected one of {METHOD_NAMES}")


@dataclass(frozen=True)
class ReweightedTrainingSet:
    """Pooled trusted+untrusted rows with per-row weights and provenance flags."""

    data: Dataset
    weights: WeightVector
    source: np.ndarray  # 1 = trusted, 0 = untrusted

    def __post_init__(self) -> None:
        if len(self.weights) != self.data.n_samples or self.source.shape[0] != self.data.n_samples:
            raise ValueError("weights and provenance must align with the pooled rows")
        if not np.all(self.weights.values[self.source == 1] == 1.0):
            raise ValueError("trusted rows must carry weight exactly 1")


def calibrated_trainer(learner_factory: Callable[[], ProbabilisticModel],
                       n_folds: int = 3, seed: int = 0) -> Trainer:
    """Standard trainer: cross-fitted isotonic calibration around the base learner."""

    def train(dataset: Dataset) -> ProbabilisticModel:
        return fit_calibrated(dataset, learner_factory, n_folds=n_folds, seed=seed)

    return train


def _cap(values: np.ndarray) -> np.ndarray:
    return np.clip(values, 0.0, WEIGHT_CAP)


def _concept_ratio(biq: BiqualityDataset, trainer: Trainer) -> tuple[np.ndarray, tuple[str, ...]]:
    f_t = trainer(biq.trusted)
    f_u = trainer(biq.untrusted)
    X, y = biq.untrusted.features, biq.untrusted.labels
    p_t = clip_probabilities(np.asarray(f_t.predict_proba(X)))
    p_u = clip_probabilities(np.asarray(f_u.predict_proba(X)))
    rows = np.arange(X.shape[0])
    ratio = p_t[rows, y] / p_u[rows, y]
    flags = []
    missing = np.flatnonzero(biq.trusted.class_counts() == 0)
    for k in missing:
        if np.any(y == k):
            flags.append(f"class_{k}_missing_from_trusted")
    return ratio, tuple(flags)


def irbl_weights(biq: BiqualityDataset, learner_factory: Trainer) -> WeightVector:
    """Concept-ratio weights over the untrusted rows.

    The weight of untrusted row (x, y) is the clipped ratio of the trusted
    concept probability to the untrusted concept probability at (x, y);
    trusted rows always train with weight 1.  ``learner_factory`` maps a
    dataset to a fitted probabilistic model.
    """
    ratio, flags = _concept_ratio(biq, learner_factory)
    return WeightVector(_cap(ratio), flags)


def _source_odds(dataset_source: Dataset, trainer: Trainer, query: np.ndarray) -> np.ndarray:
    model = trainer(dataset_source)
    proba = clip_probabilities(np.asarray(model.predict_proba(query)))
    return proba[:, 1] / proba[:, 0]


def irbl2_weights(biq: BiqualityDataset, learner_factory: Trainer) -> WeightVector:
    """Concept ratio times a discriminative covariate-shift correction.

    The untrusted weight multiplies the concept ratio by the trusted-vs-
    untrusted posterior odds of a source classifier over the pooled rows and
    by the empirical size ratio |D_U| / |D_T|.
    """
    ratio, flags = _concept_ratio(biq, learner_factory)
    odds = _source_odds(source_labeled_set(biq), learner_factory, biq.untrusted.features)
    size_ratio = biq.untrusted.n_samples / biq.trusted.n_samples
    return WeightVector(_cap(ratio * odds * size_ratio), flags)


RatioEstimator = Callable[[np.ndarray, np.ndarray], np.ndarray]


def kdr_weights(biq: BiqualityDataset, ratio_estimator: RatioEstimator) -> WeightVector:
    """Per-class density-ratio weights with empirical prior correction.

    For each class the estimator receives the trusted and untrusted feature
    rows of that class and returns per-untrusted-row class-conditional ratio
    estimates; these are rescaled by the empirical class priors.  Classes
    absent from the trusted partition get weight 0, flagged.
    """
    y_u = biq.untrusted.labels
    n_t, n_u = biq.trusted.n_samples, biq.untrusted.n_samples
    counts_t = biq.trusted.class_counts()
    counts_u = biq.untrusted.class_counts()
    values = np.zeros(n_u)
    flags: list[str] = []
    for k in range(biq.n_classes):
        rows_u = np.flatnonzero(y_u == k)
        if rows_u.size == 0:
            continue
        if counts_t[k] == 0:
            flags.append(f"class_{k}_missing_from_trusted")
            continue
        Xt_k = biq.trusted.features[biq.trusted.labels == k]
        Xu_k = biq.untrusted.features[rows_u]
        conditional = np.asarray(ratio_estimator(Xt_k, Xu_k), dtype=np.float64)
        prior_correction = (counts_t[k] / n_t) * (n_u / counts_u[k])
        values[rows_u] = conditional * prior_correction
    return WeightVector(_cap(values), tuple(flags))


def kpdr_weights(biq: BiqualityDataset, learner_factory: Trainer) -> WeightVector:
    """Per-class discriminative density-ratio weights.

    A source classifier is trained per class on that class's pooled rows; the
    untrusted weight is its clipped posterior odds times |D_U| / |D_T|
    (the class priors cancel into the per-class source posteriors).
    """
    n_t, n_u = biq.trusted.n_samples, biq.untrusted.n_samples

    def estimator(Xt_k: np.ndarray, Xu_k: np.ndarray) -> np.ndarray:
        features = np.vstack([Xt_k, Xu_k])
        source = np.concatenate(
            [np.ones(Xt_k.shape[0], dtype=np.int64), np.zeros(Xu_k.shape[0], dtype=np.int64)]
        )
        pool = Dataset(features, source, biq.trusted.feature_names, n_classes=2,
                       label_names=("untrusted", "trusted"))
        odds = _source_odds(pool, learner_factory, Xu_k)
        # posterior odds absorb the in-pool priors |D_T^k| / |D_U^k|; undo the
        # generic per-class prior correction so the pooled-size ratio remains
        return odds * (Xu_k.shape[0] / Xt_k.shape[0])

    weights = kdr_weights(biq, estimator)
    # kdr applied (|D_T^k|/|D_T|) (|D_U|/|D_U^k|); combined with the estimator
    # factor this leaves odds * |D_U| / |D_T|, the per-class source rule.
    return weights


def kkmm_weights(biq: BiqualityDataset, params: KMMParams = KMMParams()) -> WeightVector:
    """Per-class kernel-mean-matching weights with empirical prior correction."""
    batch_flags: list[str] = []

    def estimator(Xt_k: np.ndarray, Xu_k: np.ndarray) -> np.ndarray:
        result = kmm_weights(Xt_k, Xu_k, params)
        batch_flags.extend(result.flags)
        return result.values

    weights = kdr_weights(biq, estimator)
    return WeightVector(weights.values, tuple(sorted(set(weights.flags) | set(batch_flags))))


def compute_method_weights(biq: BiqualityDataset, method: ReweightingMethod,
                           trainer: Trainer) -> WeightVector:
    """Untrusted-row weights for any non-baseline method."""
    if method.name == "IRBL":
        return irbl_weights(biq, trainer)
    if method.name == "IRBL2":
        return irbl2_weights(biq, trainer)
    if method.name == "PDR":
        return pdr_weights(biq, trainer)
    if method.name == "K-PDR":
        return kpdr_weights(biq, trainer)
    if method.name == "K-KMM":
        kmm_config = method.config.get("kmm", {})
        return kkmm_weights(biq, KMMParams(**kmm_config))
    raise ValueError(f"{method.name} does not produce importance weights")


def assemble_reweighted(biq: BiqualityDataset, untrusted_weights: WeightVector) -> ReweightedTrainingSet:
    """Pool both partitions; trusted rows carry weight exactly 1."""
    if len(untrusted_weights) != biq.untrusted.n_samples:
        raise ValueError("weights must align with the untrusted rows")
    features, labels, source = biq.pooled()
    pooled = Dataset(features, labels, biq.trusted.feature_names, biq.n_classes,
                     biq.trusted.label_names)
    values = np.concatenate([np.ones(biq.trusted.n_samples), untrusted_weights.values])
    return ReweightedTrainingSet(pooled, WeightVector(values, untrusted_weights.flags), source)


def train_with_method(biq: BiqualityDataset, method: ReweightingMethod,
                      learner_factory: Callable[[], ProbabilisticModel],
                      seed: int = 0, calib_folds: int = 3) -> ProbabilisticModel:
    """Train the final model for a method (baselines included).

    ``learner_factory`` returns a fresh unfitted model.  Weight estimation
    uses cross-fitted calibrated classifiers; the final model is fitted
    uncalibrated on the pooled, reweighted rows.
    """
    if method.name == "TrustedOnly":
        model = learner_factory()
        return model.fit(biq.trusted.features, biq.trusted.labels,
                         n_classes=biq.n_classes)
    if method.name == "NoCorrection":
        features, labels, _ = biq.pooled()
        model = learner_factory()
        return model.fit(features, labels, n_classes=biq.n_classes)

    trainer = calibrated_trainer(learner_factory, n_folds=calib_folds, seed=seed)
    weights = compute_method_weights(biq, method, trainer)
    training_set = assemble_reweighted(biq, weights)
    model = learner_factory()
    model.fit(training_set.data.features, training_set.data.labels,
              sample_weight=training_set.weights.values, n_classes=biq.n_classes)
    model.flags = tuple(model.flags) + training_set.weights.flags
    return model
