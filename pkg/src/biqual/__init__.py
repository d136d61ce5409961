"""Biquality learning toolkit.

Importance reweighting for training from a small trusted dataset plus a large
untrusted dataset under joint distribution shift, with synthetic corruption
generators and a statistical benchmark harness.
"""

from .data import (
    BiqualityDataset,
    Dataset,
    SplitSpec,
    calibrate_trusted_ratio,
    load_csv,
    make_two_moons,
    save_csv,
    stratified_split,
)
from .density_ratio import KMMParams, WeightVector, kmm_weights, pdr_weights, rbf_kernel
from .evalstat import (
    CurveSummary,
    cohens_kappa,
    friedman_nemenyi,
    normalized_auc,
    wilcoxon_signed_rank,
)
from .harness import BenchmarkReport, ExperimentConfig, RunRecord, run_experiment, summarize
from .learners import (
    GBTParams,
    GradientBoostedTrees,
    DecisionTree,
    TreeParams,
    calibrate,
    fit_calibrated,
    fit_decision_tree,
    fit_gbt,
    fit_isotonic,
)
from .corruption import (
    ClassConditionalSpec,
    ConceptDriftSpec,
    CorruptionAudit,
    PermutationMatrix,
    inject_class_conditional_shift,
    inject_concept_drift,
    kmeans,
    mean_silhouette,
    sample_derangement,
)
from .reweighting import (
    ReweightingMethod,
    ReweightedTrainingSet,
    calibrated_trainer,
    irbl_weights,
    irbl2_weights,
    kdr_weights,
    kkmm_weights,
    kpdr_weights,
    train_with_method,
)

__version__ = "0.1.0"

__all__ = [
    "BiqualityDataset", "Dataset", "SplitSpec", "calibrate_trusted_ratio", "load_csv",
    "make_two_moons", "save_csv", "stratified_split",
    "KMMParams", "WeightVector", "kmm_weights", "pdr_weights", "rbf_kernel",
    "CurveSummary", "cohens_kappa", "friedman_nemenyi", "normalized_auc",
    "wilcoxon_signed_rank",
    "BenchmarkReport", "ExperimentConfig", "RunRecord", "run_experiment", "summarize",
    "GBTParams", "GradientBoostedTrees", "DecisionTree", "TreeParams", "calibrate",
    "fit_calibrated", "fit_decision_tree", "fit_gbt", "fit_isotonic",
    "ClassConditionalSpec", "ConceptDriftSpec", "CorruptionAudit", "PermutationMatrix",
    "inject_class_conditional_shift", "inject_concept_drift", "kmeans", "mean_silhouette",
    "sample_derangement",
    "ReweightingMethod", "ReweightedTrainingSet", "calibrated_trainer", "irbl_weights",
    "irbl2_weights", "kdr_weights", "kkmm_weights", "kpdr_weights", "train_with_method",
]
