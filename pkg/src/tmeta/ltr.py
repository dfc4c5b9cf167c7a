"""Gradient-boosted regression trees for ranking.

Three objectives share one booster:

``pointwise_squared``
    squared error on the targets;
``pairwise_logistic``
    RankNet logistic loss over within-query pairs ordered by target;
``lambda_ndcg``
    RankNet gradients scaled by the NDCG change of swapping the pair, with
    integer grades ``K - 1 - position`` taken from the target order.

Trees are fit by exact greedy search on second-order statistics.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ._backend import kernels
from .core import DataError, DegenerateWarning
from .rankcorr import dcg, ndcg_from_scores

OBJECTIVES = ("lambda_ndcg", "pairwise_logistic", "pointwise_squared")
HESS_FLOOR = 1e-6
MAX_REJECTED = 20   # consecutive guarded-stage rejections before stopping
MODEL_FORMAT = "tmeta-ranker/1"

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RankingInstance:
    query_id: str
    item_id: str
    feature: np.ndarray
    target: float


@dataclass(frozen=True)
class GbdtParams:
    n_trees: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_samples_leaf: int = 2
    objective: str = "lambda_ndcg"
    reg_lambda: float = 1.0
    seed: int = 0
    # shrink (down to zero) any lambda stage that lowers training NDCG
    guard_stages: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise DataError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise DataError("max_depth must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise DataError("learning_rate must be in (0, 1]")
        if self.min_samples_leaf < 1:
            raise DataError("min_samples_leaf must be >= 1")
        if self.objective not in OBJECTIVES:
            raise DataError(f"unknown objective {self.objective!r}")
        if self.reg_lambda < 0:
            raise DataError("reg_lambda must be >= 0")


@dataclass
class Tree:
    feature: np.ndarray    # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            rows = np.flatnonzero(inner)
            go_left = X[rows, f[inner]] <= self.threshold[node[inner]]
            node[rows] = np.where(go_left, self.left[node[inner]], self.right[node[inner]])

    def predict(self, X):
        return self.value[self.apply(X)]

    def to_dict(self):
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(), "value": self.value.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["feature"], dtype=np.int64), np.array(d["threshold"], dtype=np.float64),
                   np.array(d["left"], dtype=np.int64), np.array(d["right"], dtype=np.int64),
                   np.array(d["value"], dtype=np.float64))


@dataclass
class Ensemble:
    base_score: float
    trees: list[Tree] = field(default_factory=list)
    weights: list[float] = field(default_factory=list)

    def predict(self, X):
        out = np.full(X.shape[0], self.base_score)
        for tree, w in zip(self.trees, self.weights):
            out += w * tree.predict(X)
        return out

    def to_dict(self):
        return {"base_score": self.base_score, "weights": list(self.weights),
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["base_score"]), [Tree.from_dict(t) for t in d["trees"]],
                   [float(w) for w in d["weights"]])


@dataclass
class RankerModel:
    kind: str
    input_dim: int
    payload: object
    training_meta: dict = field(default_factory=dict)

    def predict(self, features) -> np.ndarray:
        X = np.asarray(features, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.input_dim:
            raise DataError(f"feature dimension {X.shape[1]} != model input_dim {self.input_dim}")
        return self.payload.predict(X)

    def to_dict(self) -> dict:
        return {"format": MODEL_FORMAT, "kind": self.kind, "input_dim": self.input_dim,
                "training_meta": self.training_meta, "payload": self.payload.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "RankerModel":
        if d.get("format") != MODEL_FORMAT:
            raise DataError(f"unsupported model format {d.get('format')!r}")
        kind = d["kind"]
        if kind == "gbdt":
            payload = Ensemble.from_dict(d["payload"])
        elif kind == "mlp":
            from .mlp import Mlp
            payload = Mlp.from_dict(d["payload"])
        else:
            raise DataError(f"unknown model kind {kind!r}")
        return cls(kind, int(d["input_dim"]), payload, d.get("training_meta", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "RankerModel":
        return cls.from_dict(json.loads(text))


def lambda_gradients(targets, predictions, rel=None, use_ndcg: bool = True):
    """Per-item gradient and hessian of the pairwise ranking loss for one query.

    ``rel`` defaults to the grades implied by the target order. With
    ``use_ndcg`` false this is plain RankNet over pairs with distinct targets.
    """
    t = np.ascontiguousarray(targets, dtype=np.float64)
    p = np.ascontiguousarray(predictions, dtype=np.float64)
    if t.shape != p.shape or t.ndim != 1 or t.size < 2:
        raise DataError("need matching 1-D targets and predictions with >= 2 items")
    grad = np.zeros_like(p)
    hess = np.zeros_like(p)
    _query_gradients(t, p, rel, use_ndcg, grad, hess)
    return grad, hess


def _grades(t):
    k = t.size
    rel = np.empty(k, dtype=np.int64)
    rel[np.argsort(-t, kind="stable")] = k - 1 - np.arange(k)
    return rel


def _query_gradients(t, p, rel, use_ndcg, grad, hess):
    if use_ndcg:
        if rel is None:
            rel = _grades(t)
        rel = np.ascontiguousarray(rel, dtype=np.int64)
        ideal = dcg(np.argsort(-rel, kind="stable"), rel)
        # pairs are ordered by grade so tied targets still get a preference
        kernels.pair_gradients(p, rel.astype(np.float64), rel, True, 1.0 / ideal, grad, hess)
    else:
        dummy = np.zeros(t.size, dtype=np.int64)
        kernels.pair_gradients(p, t, dummy, False, 1.0, grad, hess)


class _Data:
    def __init__(self, instances: Sequence[RankingInstance]):
        if not instances:
            raise DataError("no training instances")
        X = np.array([np.asarray(i.feature, dtype=np.float64) for i in instances])
        y = np.array([float(i.target) for i in instances])
        if X.ndim != 2:
            raise DataError("feature dimension must be constant")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise DataError("non-finite features or targets")
        self.X = np.ascontiguousarray(X)
        self.y = y
        qids = [i.query_id for i in instances]
        self.groups = []
        seen: dict[str, list[int]] = {}
        for n, q in enumerate(qids):
            seen.setdefault(q, []).append(n)
        self.groups = [np.array(v) for v in seen.values()]


def _query_subsample(data: _Data, rng) -> np.ndarray:
    pick = rng.permutation(len(data.groups))[: max(1, len(data.groups) // 2)]
    return np.sort(np.concatenate([data.groups[i] for i in pick])).astype(np.int64)


def _build_tree(X, presorted, Xs, grad, hess, params: GbdtParams, rows=None) -> Tree:
    N = X.shape[0]
    feature, threshold, left, right, value = [], [], [], [], []

    def leaf_value(idx):
        G = float(np.cumsum(grad[idx])[-1])
        H = float(np.cumsum(hess[idx])[-1])
        return -G / max(H + params.reg_lambda, HESS_FLOOR)

    def grow(idx, depth):
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(leaf_value(idx))
        if depth >= params.max_depth or idx.size < 2 * params.min_samples_leaf:
            return node
        mask = np.zeros(N, dtype=np.uint8)
        mask[idx] = 1
        f, thr, gain = kernels.best_split(Xs, presorted, mask, idx, grad, hess,
                                          params.min_samples_leaf, params.reg_lambda)
        if f < 0:
            return node
        go_left = X[idx, f] <= thr
        feature[node] = int(f)
        threshold[node] = float(thr)
        left[node] = grow(idx[go_left], depth + 1)
        right[node] = grow(idx[~go_left], depth + 1)
        return node

    grow(np.arange(N, dtype=np.int64) if rows is None else rows, 0)
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
                np.array(right, dtype=np.int64), np.array(value))


def _gradients(data: _Data, pred, objective):
    if objective == "pointwise_squared":
        return pred - data.y, np.ones_like(pred)
    grad = np.zeros_like(pred)
    hess = np.zeros_like(pred)
    use_ndcg = objective == "lambda_ndcg"
    for g in data.groups:
        if g.size < 2:
            continue
        gg = np.zeros(g.size)
        hh = np.zeros(g.size)
        _query_gradients(data.y[g], np.ascontiguousarray(pred[g]), None, use_ndcg, gg, hh)
        grad[g] = gg
        hess[g] = hh
    return grad, hess


class _NdcgEvaluator:
    """Mean NDCG over many queries at once; groups of equal size share one array op."""

    def __init__(self, groups, y):
        self.n = len(groups)
        buckets: dict[int, list[int]] = {}
        for q, g in enumerate(groups):
            buckets.setdefault(g.size, []).append(q)
        self.parts = []
        for k, qs in sorted(buckets.items()):
            if k < 2:
                self.parts.append((np.array(qs), None, None, None))
                continue
            idx = np.array([groups[q] for q in qs])
            rel = np.empty(idx.shape, dtype=np.int64)
            gt = np.argsort(-y[idx], axis=1, kind="stable")
            np.put_along_axis(rel, gt, np.arange(k - 1, -1, -1)[None, :], axis=1)
            gains = np.exp2(rel.astype(np.float64)) - 1.0
            disc = np.log2(np.arange(2, k + 2, dtype=np.float64))
            ideal = np.sum(np.take_along_axis(gains, gt, axis=1) / disc, axis=1)
            self.parts.append((np.array(qs), idx, gains, (disc, ideal)))

    def __call__(self, pred) -> float:
        vals = np.empty(self.n)
        for qs, idx, gains, extra in self.parts:
            if idx is None:
                vals[qs] = 1.0
                continue
            disc, ideal = extra
            order = np.argsort(-pred[idx], axis=1, kind="stable")
            vals[qs] = np.sum(np.take_along_axis(gains, order, axis=1) / disc, axis=1) / ideal
        return float(np.mean(vals))


def mean_ndcg(groups, y, pred) -> float:
    """Mean per-query NDCG of ``pred`` against grades from ``y``."""
    return _NdcgEvaluator(groups, y)(np.asarray(pred, dtype=np.float64))


def train(instances: Sequence[RankingInstance], params: GbdtParams = GbdtParams(),
          history: list | None = None) -> RankerModel:
    """Fit a boosted ensemble. ``history`` (if given) receives one training-loss entry per stage."""
    data = _Data(instances)
    X, y = data.X, data.y
    if all(np.ptp(y[g]) == 0 for g in data.groups):
        warnings.warn("all targets equal within every query; model is constant", DegenerateWarning,
                      stacklevel=2)
    base = float(np.mean(y)) if params.objective == "pointwise_squared" else 0.0
    ens = Ensemble(base)
    pred = np.full(X.shape[0], base)
    presorted = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))
    Xs = np.ascontiguousarray(np.take_along_axis(X.T, presorted, axis=1))
    guard = params.guard_stages and params.objective == "lambda_ndcg"
    evaluate = _NdcgEvaluator(data.groups, y) if guard else None
    current = evaluate(pred) if guard else None
    rng = np.random.default_rng(params.seed)
    rejected = 0
    while len(ens.trees) < params.n_trees:
        grad, hess = _gradients(data, pred, params.objective)
        if not np.any(grad):
            break
        if rejected:
            # a rejected stage would be refit identically; retry on a random half of the queries
            tree = _build_tree(X, presorted, Xs, grad, hess, params, _query_subsample(data, rng))
        else:
            tree = _build_tree(X, presorted, Xs, grad, hess, params)
        if tree.feature[0] < 0 and params.objective != "pointwise_squared":
            if not guard or not rejected:
                break
        step = tree.predict(X)
        w = params.learning_rate
        if guard:
            w, current = _guarded_step(evaluate, pred, step, w, current)
            if w == 0.0:
                rejected += 1
                if rejected > MAX_REJECTED:
                    break
                continue
            rejected = 0
        pred = pred + w * step
        ens.trees.append(tree)
        ens.weights.append(w)
        if history is not None:
            history.append(current if guard else _loss(data, pred, params.objective))
    meta = {"objective": params.objective, "seed": params.seed, "params": asdict(params),
            "n_stages": len(ens.trees)}
    return RankerModel("gbdt", X.shape[1], ens, meta)


def _guarded_step(evaluate, pred, step, w, current, halvings: int = 12):
    for _ in range(halvings):
        score = evaluate(pred + w * step)
        if score >= current - 1e-9:
            return w, score
        w *= 0.5
    return 0.0, current


def _loss(data, pred, objective):
    if objective == "pointwise_squared":
        return float(np.mean((pred - data.y) ** 2))
    return mean_ndcg(data.groups, data.y, pred)


def predict(model: RankerModel, features) -> np.ndarray:
    return model.predict(features)


def rank_items(model: RankerModel, query_features) -> list[int]:
    """Item indices by descending predicted score; ties keep item order."""
    scores = predict(model, query_features)
    return [int(i) for i in np.argsort(-scores, kind="stable")]
