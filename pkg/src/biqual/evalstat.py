"""Predictive metrics and rank-based statistical comparisons."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "confusion_matrix",
    "cohens_kappa",
    "evaluate_kappa",
    "normalized_auc",
    "CurveSummary",
    "RankTestResult",
    "wilcoxon_signed_rank",
    "friedman_nemenyi",
    "nemenyi_critical_difference",
    "average_ranks",
    "comparison_symbol",
    "NEMENYI_Q",
]


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> np.ndarray:
    """K x K count matrix, rows = true class, columns = predicted class."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred must have the same length")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def cohens_kappa(cm: np.ndarray) -> float:
    """Chance-corrected agreement from a confusion matrix.

    Returns 0 in the degenerate case where the chance agreement is 1 (all
    counts in a single cell).
    """
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    p_obs = np.trace(cm) / total
    row = cm.sum(axis=1) / total
    col = cm.sum(axis=0) / total
    p_exp = float(row @ col)
    if abs(1.0 - p_exp) < 1e-15:
        return 0.0
    return float((p_obs - p_exp) / (1.0 - p_exp))


def evaluate_kappa(model, dataset) -> float:
    """Kappa of a probabilistic model's argmax predictions on a dataset."""
    proba = model.predict_proba(dataset.features)
    pred = np.argmax(proba, axis=1)
    return cohens_kappa(confusion_matrix(dataset.labels, pred, dataset.n_classes))


def normalized_auc(points: Sequence[tuple[float, float]]) -> float:
    """Trapezoidal area under a (strength, metric) curve over the domain length."""
    pts = sorted((float(x), float(y)) for x, y in points)
    if len(pts) < 2:
        raise ValueError("need at least 2 curve points")
    xs = np.array([x for x, _ in pts])
    ys = np.array([y for _, y in pts])
    if np.any(np.diff(xs) <= 0):
        raise ValueError("curve strengths must be strictly increasing")
    trapezoid = getattr(np, "trapezoid", np.trapz)
    return float(trapezoid(ys, xs) / (xs[-1] - xs[0]))


@dataclass(frozen=True)
class CurveSummary:
    """A metric-vs-corruption-strength curve with its normalized area."""

    points: tuple[tuple[float, float], ...]
    auc: float

    @classmethod
    def from_points(cls, points: Sequence[tuple[float, float]]) -> "CurveSummary":
        pts = tuple(sorted((float(x), float(y)) for x, y in points))
        return cls(pts, normalized_auc(pts))


@dataclass(frozen=True)
class RankTestResult:
    statistic: float
    p_value: float
    decision: str  # "reject" or "retain"
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError("p_value must lie in [0, 1]")


def _average_rank(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n of ascending values, ties share the average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_signed_rank_p(ranks: np.ndarray, w_plus: float) -> float:
    # Null distribution of 2*W+ by dynamic programming; average ranks are
    # half-integers so doubling makes every sum an integer.
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    upper = 0
    for r in doubled:
        nxt = counts.copy()
        nxt[r : upper + r + 1] += counts[: upper + 1]
        counts = nxt
        upper += r
    counts /= counts.sum()
    w2 = int(round(2.0 * w_plus))
    p_low = counts[: w2 + 1].sum()
    p_high = counts[w2:].sum()
    return float(min(1.0, 2.0 * min(p_low, p_high)))


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float], alpha: float = 0.05) -> RankTestResult:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped and ties share average ranks.  The p-value
    is exact (sign enumeration over the null) for n <= 20 and otherwise uses
    the normal approximation with tie and continuity corrections.  Fewer than
    5 nonzero differences retains the null with a flag.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("paired samples must share a length")
    diffs = a - b
    diffs = diffs[diffs != 0.0]
    n = diffs.size
    if n == 0:
        return RankTestResult(0.0, 1.0, "retain", ("all_zero_differences",))
    ranks = _average_rank(np.abs(diffs))
    w_plus = float(ranks[diffs > 0].sum())
    w_minus = float(ranks[diffs < 0].sum())
    statistic = min(w_plus, w_minus)
    if n < 5:
        return RankTestResult(statistic, 1.0, "retain", ("too_few_pairs",))
    if n <= 20:
        p = _exact_signed_rank_p(ranks, w_plus)
    else:
        mu = n * (n + 1) / 4.0
        _, tie_counts = np.unique(np.abs(diffs), return_counts=True)
        tie_term = float(np.sum(tie_counts.astype(np.float64) ** 3 - tie_counts)) / 48.0
        sigma = math.sqrt(n * (n + 1) * (2 * n + 1) / 24.0 - tie_term)
        z = (abs(w_plus - mu) - 0.5) / sigma
        p = min(1.0, 2.0 * _normal_sf(z))
    decision = "reject" if p < alpha else "retain"
    return RankTestResult(statistic, p, decision)


def comparison_symbol(result: RankTestResult, diffs: Sequence[float]) -> str:
    """Map a pairwise test outcome to 'win' / 'tie' / 'loss' for the first sample."""
    if result.decision != "reject":
        return "tie"
    nonzero = [d for d in diffs if d != 0.0]
    median = float(np.median(nonzero)) if nonzero else 0.0
    return "win" if median > 0 else "loss"


# Critical values q_alpha(k) for the Nemenyi post-hoc test (studentized range
# at infinite df divided by sqrt(2)), k = number of methods.
NEMENYI_Q: dict[float, dict[int, float]] = {
    0.05: {
        2: 1.960, 3: 2.344, 4: 2.569, 5: 2.728, 6: 2.850, 7: 2.949, 8: 3.031,
        9: 3.102, 10: 3.164, 11: 3.219, 12: 3.268, 13: 3.313, 14: 3.354,
        15: 3.391, 16: 3.426, 17: 3.458, 18: 3.489, 19: 3.517, 20: 3.544,
    },
    0.10: {
        2: 1.645, 3: 2.052, 4: 2.291, 5: 2.460, 6: 2.589, 7: 2.693, 8: 2.780,
        9: 2.855, 10: 2.920, 11: 2.978, 12: 3.030, 13: 3.077, 14: 3.120,
        15: 3.159, 16: 3.196, 17: 3.230, 18: 3.261, 19: 3.291, 20: 3.319,
    },
}


def nemenyi_critical_difference(n_methods: int, n_datasets: int, alpha: float = 0.05) -> float:
    """CD = q_alpha(k) * sqrt(k (k + 1) / (6 N))."""
    table = NEMENYI_Q.get(round(alpha, 2))
    if table is None:
        raise ValueError(f"no critical values tabulated for alpha={alpha}")
    if n_methods not in table:
        raise ValueError(f"critical values tabulated for k in [2, 20], got {n_methods}")
    q = table[n_methods]
    return q * math.sqrt(n_methods * (n_methods + 1) / (6.0 * n_datasets))


def average_ranks(scores: np.ndarray) -> np.ndarray:
    """Mean rank per method over datasets; rank 1 goes to the highest score."""
    scores = np.asarray(scores, dtype=np.float64)
    ranks = np.empty_like(scores)
    for j in range(scores.shape[1]):
        ranks[:, j] = _average_rank(-scores[:, j])
    return ranks.mean(axis=1)


def _betacf(a: float, b: float, x: float) -> float:
    # Continued fraction for the regularized incomplete beta function.
    max_it, eps, fpmin = 200, 1e-14, 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_it + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


def _betainc(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def _f_sf(x: float, d1: float, d2: float) -> float:
    """Survival function of the F distribution."""
    if x <= 0.0:
        return 1.0
    return _betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * x))


def friedman_nemenyi(
    scores: np.ndarray, alpha: float = 0.05
) -> tuple[RankTestResult, float, np.ndarray]:
    """Friedman test (Iman-Davenport F form) plus the Nemenyi critical difference.

    ``scores`` is a (methods x datasets) matrix; higher is better.  Returns
    the omnibus test result, the critical difference for the mean-rank
    diagram, and the per-method mean ranks.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError("scores must be a methods x datasets matrix")
    k, n = scores.shape
    if k < 3 or n < 2:
        raise ValueError("need at least 3 methods and 2 datasets")
    mean_ranks = average_ranks(scores)
    chi2 = 12.0 * n / (k * (k + 1)) * float(np.sum((mean_ranks - (k + 1) / 2.0) ** 2))
    denom = n * (k - 1) - chi2
    flags: tuple[str, ...] = ()
    if denom <= 0:
        p = 0.0
        statistic = math.inf
        flags = ("f_statistic_saturated",)
    else:
        statistic = (n - 1) * chi2 / denom
        p = _f_sf(statistic, k - 1.0, (k - 1.0) * (n - 1.0))
    decision = "reject" if p < alpha else "retain"
    cd = nemenyi_critical_difference(k, n, alpha)
    return RankTestResult(statistic, p, decision, flags), cd, mean_ranks
