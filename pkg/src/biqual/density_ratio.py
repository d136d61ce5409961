"""Covariate-shift density-ratio estimators: discriminative (PDR) and kernel mean matching."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .data import BiqualityDataset, Dataset
from .learners.base import PROB_CLIP, clip_probabilities

__all__ = [
    "WeightVector",
    "KMMParams",
    "rbf_kernel",
    "rbf_gram",
    "default_gamma",
    "source_labeled_set",
    "pdr_weights",
    "kmm_weights",
]


@dataclass(frozen=True)
class WeightVector:
    """Nonnegative per-sample importance weights aligned to a dataset's rows."""

    values: np.ndarray
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError("weights must be a 1-D vector")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("weights must be finite and nonnegative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "flags", tuple(self.flags))

    def __len__(self) -> int:
        return self.values.size

    def to_csv(self, path: str | Path) -> None:
        """Single-column CSV aligned to the untrusted row order."""
        with Path(path).open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["weight"])
            for v in self.values:
                writer.writerow([repr(float(v))])

    @classmethod
    def from_csv(cls, path: str | Path) -> "WeightVector":
        with Path(path).open(newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            header = next(reader)
            if header != ["weight"]:
                raise ValueError(f"{path}: expected a single 'weight' column")
            return cls(np.asarray([float(row[0]) for row in reader]))


def default_gamma(n_features: int) -> float:
    """RBF bandwidth 1 / n_features."""
    return 1.0 / n_features


def rbf_kernel(a, b, gamma: float) -> float:
    """exp(-gamma * ||a - b||^2) for two rows."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("rows must share a dimensionality")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    diff = a - b
    return float(np.exp(-gamma * np.dot(diff, diff)))


def rbf_gram(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    """Pairwise RBF kernel matrix between the rows of A and B."""
    sq = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclass(frozen=True)
class KMMParams:
    """Kernel mean matching configuration.

    ``gamma=None`` uses the 1/n_features default; ``eps=None`` uses the
    (sqrt(m) - 1)/sqrt(m) normalization slack per solved batch.
    """

    gamma: Optional[float] = None
    B: float = 1000.0
    eps: Optional[float] = None
    batch_size: int = 100
    solver: str = "projected-gradient"
    max_iters: int = 2000
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self) -> None:
        if self.B <= 0:
            raise ValueError("B must be positive")
        if self.eps is not None and self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.solver != "projected-gradient":
            raise ValueError("only the projected-gradient solver is supported")


def _project_box_slab(v: np.ndarray, upper: float, lo_sum: float, hi_sum: float) -> np.ndarray:
    """Euclidean projection onto {0 <= x <= upper} intersected with {lo_sum <= sum(x) <= hi_sum}."""
    x = np.clip(v, 0.0, upper)
    total = x.sum()
    if lo_sum <= total <= hi_sum:
        return x
    target = hi_sum if total > hi_sum else lo_sum
    # shift mu solves sum(clip(v - mu)) = target; the sum is nonincreasing in mu
    lo, hi = np.min(v) - upper - 1.0, np.max(v) + 1.0
    for _ in range(100):
        mu = 0.5 * (lo + hi)
        s = np.clip(v - mu, 0.0, upper).sum()
        if s > target:
            lo = mu
        else:
            hi = mu
    return np.clip(v - 0.5 * (lo + hi), 0.0, upper)


def _solve_kmm_qp(K: np.ndarray, kappa: np.ndarray, upper: float, eps: float,
                  max_iters: int, tol: float) -> tuple[np.ndarray, tuple[str, ...]]:
    """Minimize 0.5 b'Kb - kappa'b over the box/slab feasible set by projected gradient."""
    m = K.shape[0]
    lo_sum, hi_sum = m * (1.0 - eps), m * (1.0 + eps)

    # Lipschitz constant from the largest Gram eigenvalue (power iteration)
    v = np.ones(m) / np.sqrt(m)
    for _ in range(50):
        v = K @ v
        norm = np.linalg.norm(v)
        if norm == 0:
            break
        v = v / norm
    lam = float(v @ (K @ v))
    step = 1.0 / max(lam * (1.0 + 1e-6), 1e-12)

    beta = _project_box_slab(np.ones(m), upper, lo_sum, hi_sum)
    objective = 0.5 * beta @ (K @ beta) - kappa @ beta
    best_beta, best_obj = beta, objective
    converged = False
    for _ in range(max_iters):
        grad = K @ beta - kappa
        candidate = _project_box_slab(beta - step * grad, upper, lo_sum, hi_sum)
        new_obj = 0.5 * candidate @ (K @ candidate) - kappa @ candidate
        if new_obj > objective:
            # descent guard; the eigenvalue estimate can be slightly low
            step *= 0.5
            continue
        moved = abs(objective - new_obj)
        beta, objective = candidate, new_obj
        if objective < best_obj:
            best_beta, best_obj = beta, objective
        if moved <= tol:
            converged = True
            break
    flags = () if converged else ("kmm_not_converged",)
    return best_beta, flags


def kmm_weights(trusted_features: np.ndarray, untrusted_features: np.ndarray,
                params: KMMParams = KMMParams()) -> WeightVector:
    """Kernel-mean-matching weights over the untrusted rows.

    Matches the untrusted weighted kernel mean to the trusted kernel mean
    subject to 0 <= beta <= B and |mean(beta) - 1| <= eps.  Untrusted sets
    larger than ``batch_size`` are solved on shuffled batches against the
    full trusted set and the per-batch weights are concatenated.
    """
    Xt = np.asarray(trusted_features, dtype=np.float64)
    Xu = np.asarray(untrusted_features, dtype=np.float64)
    if Xt.size == 0 or Xu.size == 0:
        raise ValueError("both feature matrices must be non-empty")
    if Xt.shape[1] != Xu.shape[1]:
        raise ValueError("feature matrices must share a column count")
    gamma = params.gamma if params.gamma is not None else default_gamma(Xu.shape[1])

    n_u = Xu.shape[0]
    if n_u <= params.batch_size:
        batches = [np.arange(n_u)]
    else:
        order = np.random.default_rng(params.seed).permutation(n_u)
        batches = [order[i : i + params.batch_size] for i in range(0, n_u, params.batch_size)]

    values = np.empty(n_u)
    flags: tuple[str, ...] = ()
    for batch in batches:
        Xb = Xu[batch]
        m = Xb.shape[0]
        K = rbf_gram(Xb, Xb, gamma)
        kappa = (m / Xt.shape[0]) * rbf_gram(Xb, Xt, gamma).sum(axis=1)
        eps = params.eps if params.eps is not None else (np.sqrt(m) - 1.0) / np.sqrt(m)
        beta, batch_flags = _solve_kmm_qp(K, kappa, params.B, eps, params.max_iters, params.tol)
        values[batch] = beta
        flags = flags + batch_flags
    return WeightVector(np.maximum(values, 0.0), tuple(sorted(set(flags))))


def source_labeled_set(biq: BiqualityDataset) -> Dataset:
    """Pooled features labeled by origin: 1 = trusted, 0 = untrusted."""
    features = np.vstack([biq.trusted.features, biq.untrusted.features])
    source = np.concatenate(
        [np.ones(biq.trusted.n_samples, dtype=np.int64),
         np.zeros(biq.untrusted.n_samples, dtype=np.int64)]
    )
    return Dataset(features, source, biq.trusted.feature_names, n_classes=2,
                   label_names=("untrusted", "trusted"))


def pdr_weights(biq: BiqualityDataset, learner_factory: Callable[[Dataset], object]) -> WeightVector:
    """Discriminative density-ratio weights over the untrusted rows.

    A source classifier is trained on the pooled origin-labeled set; the
    weight of an untrusted row is the clipped posterior odds of being trusted
    times the empirical size ratio |D_U| / |D_T|.
    """
    model = learner_factory(source_labeled_set(biq))
    proba = clip_probabilities(np.asarray(model.predict_proba(biq.untrusted.features)))
    ratio = biq.untrusted.n_samples / biq.trusted.n_samples
    values = proba[:, 1] / proba[:, 0] * ratio
    return WeightVector(values, tuple(getattr(model, "flags", ())))
