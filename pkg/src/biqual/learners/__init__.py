"""From-scratch probabilistic classifiers and probability calibration."""

from .base import PROB_CLIP, ProbabilisticModel, clip_probabilities, load_model, save_model
from .boosting import GBTParams, GradientBoostedTrees, fit_gbt
from .calibration import CalibratedModel, calibrate, fit_calibrated, stratified_fold_ids
from .isotonic import IsotonicMap, fit_isotonic
from .tree import DecisionTree, TreeParams, fit_decision_tree

__all__ = [
    "PROB_CLIP",
    "ProbabilisticModel",
    "clip_probabilities",
    "load_model",
    "save_model",
    "GBTParams",
    "GradientBoostedTrees",
    "fit_gbt",
    "CalibratedModel",
    "calibrate",
    "fit_calibrated",
    "stratified_fold_ids",
    "IsotonicMap",
    "fit_isotonic",
    "DecisionTree",
    "TreeParams",
    "fit_decision_tree",
]
