"""Synthetic distribution-shift injectors with audit records."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data import Dataset
from .learners.tree import DecisionTree, TreeParams

__all__ = [
    "PermutationMatrix",
    "sample_derangement",
    "ConceptDriftSpec",
    "ClassConditionalSpec",
    "CorruptionAudit",
    "write_audit",
    "inject_concept_drift",
    "inject_class_conditional_shift",
    "kmeans",
    "mean_silhouette",
    "choose_cluster_count",
]


@dataclass(frozen=True)
class PermutationMatrix:
    """A label permutation with no fixed points (derangement)."""

    mapping: tuple[int, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        mapping = tuple(int(m) for m in self.mapping)
        object.__setattr__(self, "mapping", mapping)
        if sorted(mapping) != list(range(len(mapping))):
            raise ValueError("mapping must be a bijection on [0, K)")
        if any(m == k for k, m in enumerate(mapping)):
            raise ValueError("mapping must not have fixed points")

    def apply(self, labels: np.ndarray) -> np.ndarray:
        return np.asarray(self.mapping, dtype=np.int64)[labels]


def sample_derangement(n_classes: int, seed: int) -> PermutationMatrix:
    """Rejection-sample a random permutation until it has no fixed point."""
    if n_classes < 2:
        raise ValueError("a derangement needs at least 2 classes")
    rng = np.random.default_rng(seed)
    while True:
        perm = rng.permutation(n_classes)
        if not np.any(perm == np.arange(n_classes)):
            return PermutationMatrix(tuple(int(p) for p in perm), seed)


@dataclass(frozen=True)
class ConceptDriftSpec:
    """Label-flip corruption targeting the purest tree leaves first."""

    r: float
    permutation: PermutationMatrix
    min_leaf_fraction_per_class: float = 0.10
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.r <= 1.0:
            raise ValueError("r must lie in [0, 1]")


@dataclass(frozen=True)
class ClassConditionalSpec:
    """Per-class cluster subsampling corruption."""

    rho: float
    k_range: tuple[int, int] = (2, 10)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.rho < 1.0:
            raise ValueError("rho must be at least 1")
        lo, hi = self.k_range
        if lo < 2 or hi < lo:
            raise ValueError("k_range must satisfy 2 <= lo <= hi")


@dataclass(frozen=True)
class CorruptionAudit:
    """What a corruption pass actually did."""

    realized_noise_fraction: float = 0.0
    flipped_indices: tuple[int, ...] = ()
    kept_fraction: float = 1.0
    clusters_per_class: tuple[int, ...] = ()
    leaf_purities: tuple[float, ...] = ()
    leaf_masses: tuple[int, ...] = ()
    n_selected_leaves: int = 0
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not 0.0 <= self.realized_noise_fraction <= 1.0:
            raise ValueError("realized_noise_fraction must lie in [0, 1]")
        if not 0.0 <= self.kept_fraction <= 1.0:
            raise ValueError("kept_fraction must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "realized_noise_fraction": self.realized_noise_fraction,
            "flipped_indices": list(self.flipped_indices),
            "kept_fraction": self.kept_fraction,
            "clusters_per_class": list(self.clusters_per_class),
            "leaf_purities": list(self.leaf_purities),
            "leaf_masses": list(self.leaf_masses),
            "n_selected_leaves": self.n_selected_leaves,
            "flags": list(self.flags),
        }


def write_audit(audit: CorruptionAudit, path: str | Path) -> None:
    """Persist the audit as JSON beside the corrupted dataset."""
    Path(path).write_text(json.dumps(audit.to_dict(), indent=2) + "\n", encoding="utf-8")


def inject_concept_drift(dataset: Dataset, spec: ConceptDriftSpec) -> tuple[Dataset, CorruptionAudit]:
    """Relabel the purest tree leaves through the permutation until r of the mass flips.

    Leaves are ranked by purity (ties: larger leaf, then lower id) and whole
    leaves are selected until the accumulated mass first reaches r * n, so the
    realized fraction may overshoot r by at most the last leaf's mass.
    """
    if len(spec.permutation.mapping) != dataset.n_classes:
        raise ValueError("permutation size must match the number of classes")
    if spec.r == 0.0:
        return dataset, CorruptionAudit()

    tree = DecisionTree(
        TreeParams(min_leaf_fraction_per_class=spec.min_leaf_fraction_per_class)
    ).fit(dataset.features, dataset.labels, n_classes=dataset.n_classes)
    leaf_of_row = tree.apply(dataset.features)

    leaf_ids = tree.leaf_ids()
    counts = np.array([np.count_nonzero(leaf_of_row == leaf) for leaf in leaf_ids])
    purities = np.empty(leaf_ids.size)
    for i, leaf in enumerate(leaf_ids):
        labels = dataset.labels[leaf_of_row == leaf]
        purities[i] = np.bincount(labels, minlength=dataset.n_classes).max() / max(labels.size, 1)

    order = sorted(range(leaf_ids.size), key=lambda i: (-purities[i], -counts[i], leaf_ids[i]))
    n = dataset.n_samples
    target = spec.r * n
    selected: list[int] = []
    mass = 0
    for i in order:
        if mass >= target - 1e-9:
            break
        selected.append(i)
        mass += counts[i]

    chosen_leaves = leaf_ids[selected]
    flip_mask = np.isin(leaf_of_row, chosen_leaves)
    flipped = np.flatnonzero(flip_mask)
    labels = dataset.labels.copy()
    labels[flipped] = spec.permutation.apply(labels[flipped])

    flags = []
    if leaf_ids.size == 1:
        flags.append("degenerate_tree")
    flags.extend(tree.flags)
    audit = CorruptionAudit(
        realized_noise_fraction=flipped.size / n,
        flipped_indices=tuple(int(i) for i in flipped),
        leaf_purities=tuple(float(purities[i]) for i in order),
        leaf_masses=tuple(int(counts[i]) for i in order),
        n_selected_leaves=len(selected),
        flags=tuple(flags),
    )
    return dataset.with_labels(labels), audit


def kmeans(features: np.ndarray, k: int, seed: int, max_iters: int = 300) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with D^2-sampled seeding, deterministic per seed.

    Runs to an assignment fixpoint or ``max_iters``; emptied clusters are
    re-seeded from the point farthest from its assigned centroid.
    """
    X = np.asarray(features, dtype=np.float64)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n_samples")
    rng = np.random.default_rng(seed)

    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    d2 = np.sum((X - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[j] = X[rng.integers(n)]
            continue
        centroids[j] = X[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((X - centroids[j]) ** 2, axis=1))

    assignments = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iters):
        sq = (
            np.sum(X * X, axis=1)[:, None]
            - 2.0 * (X @ centroids.T)
            + np.sum(centroids * centroids, axis=1)[None, :]
        )
        new_assignments = np.argmin(sq, axis=1)
        dist_to_own = sq[np.arange(n), new_assignments]
        for j in range(k):
            if not np.any(new_assignments == j):
                far = int(np.argmax(dist_to_own))
                centroids[j] = X[far]
                new_assignments[far] = j
                dist_to_own[far] = 0.0
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        for j in range(k):
            members = assignments == j
            if np.any(members):
                centroids[j] = X[members].mean(axis=0)
    return assignments, centroids


def mean_silhouette(features: np.ndarray, assignments: np.ndarray) -> float:
    """Mean silhouette coefficient with Euclidean distances.

    Singleton clusters contribute 0 by convention.  Requires at least two
    non-empty clusters.
    """
    X = np.asarray(features, dtype=np.float64)
    labels = np.asarray(assignments, dtype=np.int64)
    cluster_ids, counts = np.unique(labels, return_counts=True)
    if cluster_ids.size < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    n = X.shape[0]
    sq = (
        np.sum(X * X, axis=1)[:, None]
        + np.sum(X * X, axis=1)[None, :]
        - 2.0 * (X @ X.T)
    )
    dist = np.sqrt(np.maximum(sq, 0.0))

    scores = np.zeros(n)
    mean_to_cluster = np.empty((n, cluster_ids.size))
    for j, cid in enumerate(cluster_ids):
        mean_to_cluster[:, j] = dist[:, labels == cid].mean(axis=1)
    for i in range(n):
        own = np.searchsorted(cluster_ids, labels[i])
        size = counts[own]
        if size == 1:
            scores[i] = 0.0
            continue
        a = mean_to_cluster[i, own] * size / (size - 1)  # exclude self-distance
        b = np.min(np.delete(mean_to_cluster[i], own))
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())


def choose_cluster_count(features: np.ndarray, k_range: tuple[int, int], seed: int,
                         max_silhouette_points: int = 2000) -> int:
    """Cluster count in k_range maximizing the mean silhouette (ties: fewer clusters)."""
    X = np.asarray(features, dtype=np.float64)
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    sample = np.arange(n)
    if n > max_silhouette_points:
        sample = np.sort(rng.choice(n, size=max_silhouette_points, replace=False))
    best_k, best_score = None, -np.inf
    lo, hi = k_range
    for k in range(lo, min(hi, n) + 1):
        assignments, _ = kmeans(X, k, seed)
        sub = assignments[sample]
        if np.unique(sub).size < 2:
            continue
        score = mean_silhouette(X[sample], sub)
        if score > best_score + 1e-12:
            best_k, best_score = k, score
    if best_k is None:
        raise ValueError("no cluster count in range produced at least 2 clusters")
    return best_k


def _subsample_class(assignments: np.ndarray, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Local indices kept after subsampling the smaller half of the clusters.

    Clusters are sorted by size (descending, ties by id); the floor(c/2)
    smallest keep round(size / rho) members each, at least 1; the rest are
    untouched.
    """
    cluster_ids, counts = np.unique(assignments, return_counts=True)
    order = sorted(range(cluster_ids.size), key=lambda i: (-counts[i], cluster_ids[i]))
    n_small = cluster_ids.size // 2
    small = set(order[cluster_ids.size - n_small :]) if n_small else set()
    kept: list[np.ndarray] = []
    for i in range(cluster_ids.size):
        members = np.flatnonzero(assignments == cluster_ids[i])
        if i in small:
            keep = max(int(round(members.size / rho)), 1)
            members = np.sort(rng.choice(members, size=keep, replace=False))
        kept.append(members)
    return np.sort(np.concatenate(kept))


def inject_class_conditional_shift(dataset: Dataset, spec: ClassConditionalSpec) -> tuple[Dataset, CorruptionAudit]:
    """Subsample the smaller per-class clusters by 1/rho, leaving the rest intact.

    Cluster counts are chosen per class by silhouette search over
    ``spec.k_range``.  Classes with fewer samples than the minimum cluster
    count are left untouched and flagged.  Only rows are removed; features
    and labels never change.
    """
    if spec.rho == 1.0:
        return dataset, CorruptionAudit()

    seeds = np.random.SeedSequence(spec.seed).spawn(dataset.n_classes)
    kept_global: list[np.ndarray] = []
    clusters_per_class: list[int] = []
    flags: list[str] = []
    for k in range(dataset.n_classes):
        idx = np.flatnonzero(dataset.labels == k)
        if idx.size == 0:
            clusters_per_class.append(0)
            continue
        child = np.random.default_rng(seeds[k])
        class_seed = int(child.integers(2**31))
        if idx.size < spec.k_range[0]:
            flags.append(f"class_{k}_too_small_to_cluster")
            clusters_per_class.append(0)
            kept_global.append(idx)
            continue
        best_k = choose_cluster_count(dataset.features[idx], spec.k_range, class_seed)
        assignments, _ = kmeans(dataset.features[idx], best_k, class_seed)
        clusters_per_class.append(best_k)
        kept_local = _subsample_class(assignments, spec.rho, child)
        kept_global.append(idx[kept_local])

    kept = np.sort(np.concatenate(kept_global))
    audit = CorruptionAudit(
        kept_fraction=kept.size / dataset.n_samples,
        clusters_per_class=tuple(clusters_per_class),
        flags=tuple(flags),
    )
    return dataset.subset(kept), audit
