"""Weighted isotonic regression via pool-adjacent-violators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["IsotonicMap", "fit_isotonic"]


@dataclass(frozen=True)
class IsotonicMap:
    """Nondecreasing piecewise-constant map fitted by PAVA.

    Evaluation returns the fitted value of the nearest breakpoint at or below
    the query; queries outside the fitted range clamp to the boundary values.
    """

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.float64))

    def __call__(self, query) -> np.ndarray:
        q = np.asarray(query, dtype=np.float64)
        idx = np.searchsorted(self.x, q, side="right") - 1
        idx = np.clip(idx, 0, self.x.size - 1)
        return self.y[idx]

    def to_dict(self) -> dict:
        return {"x": self.x.tolist(), "y": self.y.tolist()}

    @classmethod
    def from_dict(cls, payload: dict) -> "IsotonicMap":
        return cls(np.asarray(payload["x"]), np.asarray(payload["y"]))


def fit_isotonic(x, y, w=None) -> IsotonicMap:
    """Weighted least-squares nondecreasing fit of y against x.

    Points with zero weight are ignored; duplicate x values are merged by
    weighted mean before pooling.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=np.float64)
    if x.shape != y.shape or x.shape != w.shape:
        raise ValueError("x, y and w must share a length")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    keep = w > 0
    x, y, w = x[keep], y[keep], w[keep]
    if x.size == 0:
        raise ValueError("isotonic fit needs at least one positively weighted point")

    order = np.argsort(x, kind="stable")
    x, y, w = x[order], y[order], w[order]
    # merge duplicate x values (weighted mean)
    ux, start = np.unique(x, return_index=True)
    wy = np.add.reduceat(w * y, start)
    ww = np.add.reduceat(w, start)

    # PAVA: maintain a stack of blocks with nondecreasing means
    block_wy: list[float] = []
    block_w: list[float] = []
    block_len: list[int] = []
    for i in range(ux.size):
        block_wy.append(float(wy[i]))
        block_w.append(float(ww[i]))
        block_len.append(1)
        while len(block_wy) > 1 and block_wy[-2] / block_w[-2] > block_wy[-1] / block_w[-1]:
            tail_wy, tail_w, tail_len = block_wy.pop(), block_w.pop(), block_len.pop()
            block_wy[-1] += tail_wy
            block_w[-1] += tail_w
            block_len[-1] += tail_len

    fitted = np.empty(ux.size, dtype=np.float64)
    pos = 0
    for swy, sw, ln in zip(block_wy, block_w, block_len):
        fitted[pos : pos + ln] = swy / sw
        pos += ln
    return IsotonicMap(ux, fitted)
