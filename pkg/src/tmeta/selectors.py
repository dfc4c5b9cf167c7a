"""Metric selectors: the embedding-based ranker and the baselines it is compared with.

Every selector is fitted on a :class:`MetaTaskTable` (plus embeddings where
needed) and answers :func:`recommend` with a full ordering of candidate
metrics for a new dataset.
"""
from __future__ import annotations

import json
import math
import warnings
import zlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .cluster import kmeans
from .core import DataError, EmbeddingCorpus, MetaTaskTable
from .ltr import GbdtParams, RankerModel, RankingInstance, train
from .mlp import MlpParams, train_mlp

SELECTOR_FORMAT = "tmeta-selector/1"

_GBDT_KEYS = {"n_trees", "max_depth", "learning_rate", "min_samples_leaf", "objective", "reg_lambda",
              "guard_stages"}
_MLP_KEYS = {"hidden_dims", "epochs", "step_size", "momentum"}
HYPER_KEYS: dict[str, set] = {
    "metarank_gbdt": _GBDT_KEYS,
    "metarank_mlp": _MLP_KEYS,
    "global_best": set(),
    "argosmart_1nn": set(),
    "isac_kmeans": {"k"},
    "alors_mf": {"r", "ridge", "als_iters"},
    "ncf_mlp": {"r", "ridge", "als_iters"} | _MLP_KEYS,
    "random": set(),
    "fixed": {"metric"},
}
SELECTOR_KINDS = tuple(HYPER_KEYS)
FEATURE_FREE = ("global_best", "random", "fixed")
METARANK = ("metarank_gbdt", "metarank_mlp")

DEFAULT_K = 3
DEFAULT_RANK = 3
DEFAULT_RIDGE = 1e-2
DEFAULT_ALS_ITERS = 500


class UnknownSelectorError(DataError):
    def __init__(self, kind):
        super().__init__(f"unknown selector kind {kind!r} (expected one of {', '.join(SELECTOR_KINDS)})")
        self.kind = kind


class UnseenMetricWarning(UserWarning):
    """Candidate metrics the selector cannot score were appended last."""


@dataclass(frozen=True)
class SelectorSpec:
    kind: str
    hyper: Mapping = field(default_factory=dict)
    seed: int = 0
    name: str | None = None   # label used in reports

    def __post_init__(self):
        if self.kind not in HYPER_KEYS:
            raise UnknownSelectorError(self.kind)
        bad = set(self.hyper) - HYPER_KEYS[self.kind]
        if bad:
            raise DataError(f"invalid hyperparameters for {self.kind}: {sorted(bad)}")
        if self.kind == "fixed" and "metric" not in self.hyper:
            raise DataError("fixed selector needs hyper['metric']")
        object.__setattr__(self, "hyper", dict(self.hyper))

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind == "fixed":
            return str(self.hyper["metric"])
        return self.kind

    def with_hyper(self, **updates) -> "SelectorSpec":
        return SelectorSpec(self.kind, {**self.hyper, **updates}, self.seed, self.name)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "hyper": dict(self.hyper), "seed": self.seed}
        if self.name:
            d["name"] = self.name
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SelectorSpec":
        hyper = dict(d.get("hyper", {}))
        if "hidden_dims" in hyper:
            hyper["hidden_dims"] = tuple(hyper["hidden_dims"])
        return cls(d["kind"], hyper, int(d.get("seed", 0)), d.get("name"))


@dataclass(frozen=True)
class Recommendation:
    metrics: tuple[str, ...]
    scores: np.ndarray           # aligned with ``metrics``
    unseen: tuple[str, ...] = ()

    @property
    def top(self) -> str:
        return self.metrics[0]


@dataclass
class FittedSelector:
    spec: SelectorSpec
    metrics: tuple[str, ...]     # training metric columns
    payload: dict

    def __post_init__(self):
        # C order everywhere, so a JSON round trip reproduces predictions bit for bit
        self.payload = _contiguous(self.payload)

    def to_dict(self) -> dict:
        return {"format": SELECTOR_FORMAT, **self.spec.to_dict(), "metrics": list(self.metrics),
                "payload": _encode(self.payload)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "FittedSelector":
        if d.get("format") != SELECTOR_FORMAT:
            raise DataError(f"unsupported selector format {d.get('format')!r}")
        spec = SelectorSpec.from_dict(d)
        return cls(spec, tuple(d["metrics"]), _decode(d["payload"]))

    @classmethod
    def from_json(cls, text: str) -> "FittedSelector":
        try:
            return cls.from_dict(json.loads(text))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"malformed selector file: {exc}") from None


def _contiguous(obj):
    if isinstance(obj, np.ndarray):
        return np.ascontiguousarray(obj)
    if isinstance(obj, dict):
        return {k: _contiguous(v) for k, v in obj.items()}
    return obj


def _encode(obj):
    if isinstance(obj, RankerModel):
        return {"__model__": obj.to_dict()}
    if isinstance(obj, np.ndarray):
        return {"__array__": obj.tolist(), "dtype": str(obj.dtype)}
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    return obj


def _decode(obj):
    if isinstance(obj, dict):
        if "__model__" in obj:
            return RankerModel.from_dict(obj["__model__"])
        if "__array__" in obj:
            return np.array(obj["__array__"], dtype=obj["dtype"])
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def _embedding_lookup(embeddings, kind: str):
    if embeddings is None:
        return {}
    if isinstance(embeddings, EmbeddingCorpus):
        return {n: embeddings.get(kind, n) for n in embeddings.names(kind)}
    return dict(embeddings)


def _need(embeddings: EmbeddingCorpus | None, kind: str, names: Sequence[str]) -> np.ndarray:
    if embeddings is None:
        raise DataError(f"selector needs {kind} embeddings")
    return np.array([embeddings.get(kind, n) for n in names], dtype=np.float64)


def ranking_instances(table: MetaTaskTable, embeddings: EmbeddingCorpus) -> list[RankingInstance]:
    """``[d_j ; s_k] -> tau`` instances sorted by (dataset, metric) name."""
    out = []
    for d in sorted(table.datasets):
        dv = np.asarray(embeddings.get("dataset", d), dtype=np.float64)
        for m in sorted(table.metrics):
            mv = np.asarray(embeddings.get("metric", m), dtype=np.float64)
            out.append(RankingInstance(d, m, np.concatenate([dv, mv]), table.cell(d, m)))
    return out


def _gbdt_params(spec: SelectorSpec) -> GbdtParams:
    return GbdtParams(seed=spec.seed, **spec.hyper)


def _mlp_params(spec: SelectorSpec) -> MlpParams:
    return MlpParams(seed=spec.seed, **{k: v for k, v in spec.hyper.items() if k in _MLP_KEYS})


def als(T: np.ndarray, r: int, ridge: float, seed=0, max_iter: int = DEFAULT_ALS_ITERS,
        tol: float = 1e-13):
    """Rank-``r`` factorisation ``T ~ U V'`` by ridge-regularised alternating least squares."""
    J, K = T.shape
    if not 1 <= r <= min(J, K):
        raise DataError(f"rank r={r} must be in [1, min(J, K)={min(J, K)}]")
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((K, r))
    eye = ridge * np.eye(r)
    prev = np.inf
    for _ in range(max_iter):
        U = np.linalg.lstsq(V.T @ V + eye, V.T @ T.T, rcond=None)[0].T
        V = np.linalg.lstsq(U.T @ U + eye, U.T @ T, rcond=None)[0].T
        err = float(np.sum((T - U @ V.T) ** 2))
        if prev - err <= tol * max(1.0, err):
            break
        prev = err
    return U, V


def _ridge_map(E: np.ndarray, U: np.ndarray, ridge: float):
    """Centered ridge regression ``U ~ (E - e_mean) B + u_mean`` (dual form, E may be wide)."""
    e_mean, u_mean = E.mean(axis=0), U.mean(axis=0)
    Ec, Uc = E - e_mean, U - u_mean
    G = Ec @ Ec.T + max(ridge, 1e-12) * np.eye(E.shape[0])
    B = Ec.T @ np.linalg.solve(G, Uc)
    return {"B": B, "e_mean": e_mean, "u_mean": u_mean}


def _apply_map(m, e):
    return (np.asarray(e, dtype=np.float64) - m["e_mean"]) @ m["B"] + m["u_mean"]


def _ncf_features(u_hat, dataset_emb, V):
    n = V.shape[0]
    return np.hstack([np.tile(dataset_emb, (n, 1)), np.tile(u_hat, (n, 1)), V])


def fit_selector(spec: SelectorSpec, table: MetaTaskTable,
                 embeddings: EmbeddingCorpus | None = None) -> FittedSelector:
    """Fit one selector on the training table; see the module docstring."""
    # storage order must not matter, so everything works on sorted names
    table = table.select(sorted(table.datasets), sorted(table.metrics))
    metrics = table.metrics
    kind = spec.kind
    if kind in METARANK:
        if embeddings is None:
            raise DataError(f"{kind} needs dataset and metric embeddings")
        inst = ranking_instances(table, embeddings)
        model = train(inst, _gbdt_params(spec)) if kind == "metarank_gbdt" else train_mlp(inst, _mlp_params(spec))
        memb = _need(embeddings, "metric", metrics)
        payload = {"model": model, "metric_embeddings": memb}
    elif kind == "global_best":
        payload = {"means": table.tau.mean(axis=0)}
    elif kind == "argosmart_1nn":
        payload = {"embeddings": _need(embeddings, "dataset", table.datasets), "tau": np.array(table.tau)}
    elif kind == "isac_kmeans":
        k = int(spec.hyper.get("k", DEFAULT_K))
        E = _need(embeddings, "dataset", table.datasets)
        if not 1 <= k <= len(table.datasets):
            raise DataError(f"isac k={k} must be in [1, J={len(table.datasets)}]")
        centers, labels = kmeans(E, k, seed=spec.seed)
        glob = table.tau.mean(axis=0)
        scores = np.array([table.tau[labels == c].mean(axis=0) if np.any(labels == c) else glob
                           for c in range(k)])
        payload = {"centers": centers, "cluster_scores": scores}
    elif kind in ("alors_mf", "ncf_mlp"):
        r = int(spec.hyper.get("r", DEFAULT_RANK))
        ridge = float(spec.hyper.get("ridge", DEFAULT_RIDGE))
        E = _need(embeddings, "dataset", table.datasets)
        U, V = als(np.array(table.tau), r, ridge, seed=spec.seed,
                   max_iter=int(spec.hyper.get("als_iters", DEFAULT_ALS_ITERS)))
        payload = {"U": U, "V": V, "map": _ridge_map(E, U, ridge)}
        if kind == "ncf_mlp":
            inst = []
            for j, d in enumerate(table.datasets):
                u_hat = _apply_map(payload["map"], E[j])
                feats = _ncf_features(u_hat, E[j], V)
                inst.extend(RankingInstance(d, m, feats[k], table.tau[j, k]) for k, m in enumerate(metrics))
            payload["model"] = train_mlp(inst, _mlp_params(spec))
    elif kind == "random":
        payload = {}
    else:
        fixed = spec.hyper["metric"]
        payload = {"metric": fixed}
    return FittedSelector(spec, tuple(metrics), payload)


def _order(candidates: Sequence[str], scores: np.ndarray, unseen=()) -> Recommendation:
    idx = np.argsort(-scores, kind="stable")
    return Recommendation(tuple(candidates[i] for i in idx), scores[idx], tuple(unseen))


def _known_scores(fitted: FittedSelector, candidates, known: np.ndarray) -> Recommendation:
    """Order candidates by per-training-metric scores; unseen ones go last in index order."""
    pos = {m: i for i, m in enumerate(fitted.metrics)}
    seen = [c for c in candidates if c in pos]
    unseen = [c for c in candidates if c not in pos]
    scores = np.array([known[pos[c]] for c in seen], dtype=np.float64)
    rec = _order(seen, scores)
    if not unseen:
        return rec
    warnings.warn(f"{fitted.spec.label}: cannot score unseen metrics {unseen}; ranked last",
                  UnseenMetricWarning, stacklevel=3)
    floor = (float(scores.min()) if scores.size else 0.0) - 1.0
    return Recommendation(rec.metrics + tuple(unseen),
                          np.concatenate([rec.scores, np.full(len(unseen), floor)]), tuple(unseen))


def recommend(fitted: FittedSelector, dataset_embedding=None, candidate_metrics: Sequence[str] | None = None,
              metric_embeddings: EmbeddingCorpus | Mapping | None = None,
              query_key: str | None = None) -> Recommendation:
    """Rank ``candidate_metrics`` (default: the training metrics) for one new dataset.

    ``query_key`` (typically the dataset name) is mixed into the random
    selector's stream so different queries get different draws.
    """
    candidates = list(fitted.metrics if candidate_metrics is None else candidate_metrics)
    if not candidates:
        raise DataError("no candidate metrics")
    if len(set(candidates)) != len(candidates):
        raise DataError("duplicate candidate metrics")
    kind = fitted.spec.kind
    p = fitted.payload
    if kind == "fixed":
        if p["metric"] not in candidates:
            raise DataError(f"fixed metric {p['metric']!r} is not among the candidates")
        scores = np.array([1.0 if c == p["metric"] else 0.0 for c in candidates])
        return _order(candidates, scores)
    if kind == "random":
        seq = [fitted.spec.seed] + ([zlib.crc32(query_key.encode())] if query_key is not None else [])
        rng = np.random.default_rng(seq)
        scores = np.empty(len(candidates))
        scores[rng.permutation(len(candidates))] = np.arange(len(candidates), 0, -1, dtype=np.float64)
        return _order(candidates, scores)
    if kind == "global_best":
        return _known_scores(fitted, candidates, p["means"])

    if dataset_embedding is None:
        raise DataError(f"{kind} needs a dataset embedding")
    e = np.asarray(dataset_embedding, dtype=np.float64)
    if e.ndim != 1:
        raise DataError("dataset embedding must be a vector")

    if kind in METARANK:
        model: RankerModel = p["model"]
        memb = p["metric_embeddings"]
        if e.size + memb.shape[1] != model.input_dim:
            raise DataError(f"dataset embedding has dim {e.size}, model expects {model.input_dim - memb.shape[1]}")
        given = _embedding_lookup(metric_embeddings, "metric")
        pos = {m: i for i, m in enumerate(fitted.metrics)}
        rows = []
        for c in candidates:
            if c in given:
                rows.append(np.asarray(given[c], dtype=np.float64))
            elif c in pos:
                rows.append(memb[pos[c]])
            else:
                raise DataError(f"no embedding for unseen metric {c!r}")
        X = np.hstack([np.tile(e, (len(rows), 1)), np.array(rows)])
        return _order(candidates, model.predict(X))

    if kind == "argosmart_1nn":
        E = p["embeddings"]
        if e.size != E.shape[1]:
            raise DataError(f"dataset embedding has dim {e.size}, expected {E.shape[1]}")
        sims = _cosine(E, e)
        return _known_scores(fitted, candidates, p["tau"][int(np.argmax(sims))])
    if kind == "isac_kmeans":
        C = p["centers"]
        if e.size != C.shape[1]:
            raise DataError(f"dataset embedding has dim {e.size}, expected {C.shape[1]}")
        c = int(np.argmin(((C - e) ** 2).sum(axis=1)))
        return _known_scores(fitted, candidates, p["cluster_scores"][c])
    # alors_mf / ncf_mlp
    m = p["map"]
    if e.size != m["B"].shape[0]:
        raise DataError(f"dataset embedding has dim {e.size}, expected {m['B'].shape[0]}")
    u_hat = _apply_map(m, e)
    if kind == "alors_mf":
        return _known_scores(fitted, candidates, p["V"] @ u_hat)
    return _known_scores(fitted, candidates, p["model"].predict(_ncf_features(u_hat, e, p["V"])))


def _cosine(E, e):
    norms = np.linalg.norm(E, axis=1) * np.linalg.norm(e)
    dots = E @ e
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = np.where(norms > 0, dots / np.where(norms > 0, norms, 1.0), -math.inf)
    return sims
