"""Set-to-set tracking error metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass(frozen=True)
class OspaParams:
    """Cutoff distance and order of the set metric."""

    cutoff: float = 50.0
    order: float = 1.0

    def __post_init__(self):
        if self.cutoff <= 0.0:
            raise ValueError("cutoff must be positive")
        if self.order < 1.0:
            raise ValueError("order must be at least 1")


def optimal_assignment(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-cost assignment of rows to columns of a finite cost matrix."""
    cost = np.atleast_2d(np.asarray(cost, dtype=float))
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(cost)
    return rows, cols


def ospa(est: np.ndarray, truth: np.ndarray, params: OspaParams) -> float:
    """Optimal subpattern assignment distance between two point sets.

    Pairwise distances are cut off at `params.cutoff`, the smaller set is
    optimally matched into the larger, unmatched points of the larger set
    pay the full cutoff, and the order-p mean over the larger cardinality
    is returned.  Two empty sets have distance zero; one empty set gives
    the cutoff.
    """
    a = _as_points(est)
    b = _as_points(truth)
    n, m = len(a), len(b)
    if n == 0 and m == 0:
        return 0.0
    if n == 0 or m == 0:
        return float(params.cutoff)
    if n > m:
        a, b = b, a
        n, m = m, n
    if a.shape[1] != b.shape[1]:
        raise ValueError("point sets must share a dimension")
    c = params.cutoff
    p = params.order
    dists = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    cut = np.minimum(dists, c) ** p
    rows, cols = optimal_assignment(cut)
    total = float(cut[rows, cols].sum()) + c ** p * (m - n)
    return float((total / m) ** (1.0 / p))


def _as_points(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.size == 0:
        return arr.reshape(0, 1)
    if arr.ndim == 1:
        return arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError("point sets must be (n, d) arrays")
    return arr


def mospa(table: np.ndarray) -> np.ndarray:
    """Column means of an (n_runs, n_steps) table of per-run distances."""
    t = np.asarray(table, dtype=float)
    if t.ndim != 2 or t.size == 0:
        raise ValueError("need a nonempty (n_runs, n_steps) table")
    return t.mean(axis=0)
