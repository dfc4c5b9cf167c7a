"""Rank statistics: weighted and plain Kendall tau, NDCG, tie-averaged ranks."""
from __future__ import annotations

import math
import warnings
from typing import Sequence

import numpy as np

from ._backend import kernels
from .core import DataError, DegenerateWarning

WEIGHT_SCHEMES = ("hyperbolic_additive", "uniform")


def _as_pair(S, T):
    s = np.ascontiguousarray(S, dtype=np.float64)
    t = np.ascontiguousarray(T, dtype=np.float64)
    if s.ndim != 1 or s.shape != t.shape:
        raise DataError(f"length mismatch: {s.shape} vs {t.shape}")
    if s.shape[0] < 2:
        raise DataError("need at least 2 items")
    if not (np.isfinite(s).all() and np.isfinite(t).all()):
        raise DataError("non-finite input")
    return s, t


def item_weights(T, scheme: str = "hyperbolic_additive") -> np.ndarray:
    """Per-item halves of the pair weight, so that ``w_ij = a_i + a_j``.

    Hyperbolic: ``a_i = 1 / (r_i + 1)`` with ``r_i`` the 0-based position of
    item ``i`` when ``T`` is sorted descending (ties by index).
    """
    t = np.asarray(T, dtype=np.float64)
    if scheme == "uniform":
        return np.full(t.shape[0], 0.5)
    if scheme != "hyperbolic_additive":
        raise ValueError(f"unknown weight scheme {scheme!r}")
    pos = np.empty(t.shape[0], dtype=np.float64)
    pos[np.argsort(-t, kind="stable")] = np.arange(t.shape[0])
    return 1.0 / (pos + 1.0)


def weighted_kendall_tau(S, T, scheme: str = "hyperbolic_additive") -> float:
    """Weighted Kendall correlation between scores ``S`` and ground truth ``T``.

    Pairs tied in either vector contribute nothing. If every pair is tied in
    ``S`` or in ``T`` the coefficient is undefined; 0.0 is returned and a
    :class:`DegenerateWarning` is emitted.
    """
    s, t = _as_pair(S, T)
    num, den_s, den_t = kernels.tau_sums(s, t, item_weights(t, scheme))
    if den_s == 0.0 or den_t == 0.0:
        warnings.warn("all pairs tied; tau defined as 0", DegenerateWarning, stacklevel=2)
        return 0.0
    return float(num / math.sqrt(den_s * den_t))


def kendall_tau(S, T) -> float:
    return weighted_kendall_tau(S, T, scheme="uniform")


def _check_perm(order, k):
    o = np.asarray(order, dtype=np.int64)
    if o.shape != (k,) or not np.array_equal(np.sort(o), np.arange(k)):
        raise DataError(f"not a permutation of {k} items: {list(order)}")
    return o


def relevance_from_order(ground_truth_order: Sequence[int]) -> np.ndarray:
    """Grades ``rel[item] = K - 1 - position`` of the item in the ideal order."""
    k = len(ground_truth_order)
    o = _check_perm(ground_truth_order, k)
    rel = np.empty(k, dtype=np.int64)
    rel[o] = k - 1 - np.arange(k)
    return rel


def dcg(order, rel) -> float:
    rel = np.asarray(rel, dtype=np.float64)
    gains = np.exp2(rel[np.asarray(order)]) - 1.0
    disc = np.log2(np.arange(2, len(order) + 2, dtype=np.float64))
    return float(np.sum(gains / disc))


def ndcg(predicted_order, ground_truth_order, rel=None) -> float:
    """Full-list NDCG of ``predicted_order`` against the ideal ``ground_truth_order``."""
    k = len(ground_truth_order)
    if k == 0:
        raise DataError("empty ranking")
    gt = _check_perm(ground_truth_order, k)
    pred = _check_perm(predicted_order, k)
    if k == 1:
        return 1.0
    if rel is None:
        rel = relevance_from_order(gt)
    ideal = dcg(gt, rel)
    if ideal <= 0.0:
        return 1.0
    return dcg(pred, rel) / ideal


def ndcg_from_scores(scores, targets) -> float:
    """NDCG of the descending order of ``scores`` with grades from ``targets``."""
    pred = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    gt = np.argsort(-np.asarray(targets, dtype=np.float64), kind="stable")
    return ndcg(pred, gt)


def swap_delta_ndcg(rel, pos_i: int, pos_j: int, rel_i: int, rel_j: int, ideal: float) -> float:
    """|change in NDCG| when items at positions ``pos_i``/``pos_j`` swap."""
    gain = 2.0 ** rel_i - 2.0 ** rel_j
    disc = 1.0 / math.log2(pos_i + 2.0) - 1.0 / math.log2(pos_j + 2.0)
    return abs(gain * disc) / ideal


def tie_average_ranks(values, higher_is_better: bool = True) -> np.ndarray:
    """Competition ranks with ties sharing the mean of their positions (1 = best)."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DataError("need a non-empty 1-D vector")
    if not np.isfinite(v).all():
        raise DataError("non-finite input")
    key = -v if higher_is_better else v
    order = np.argsort(key, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and key[order[j + 1]] == key[order[i]]:
            j += 1
        # positions i..j (0-based) share rank mean(i+1..j+1)
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks
