"""Leave-one-dataset-out evaluation, grid search, synthetic meta-tasks and reports."""
from __future__ import annotations

import csv
import itertools
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import (DataError, EmbeddingCorpus, EmbeddingRecord, EvaluationReport, FoldResult,
                   LabeledFeatureSet, MetaTaskTable, descending_order)
from .mte import MetricConfig, score_model_zoo
from .rankcorr import ndcg, tie_average_ranks, weighted_kendall_tau
from .selectors import SelectorSpec, UnseenMetricWarning, fit_selector, recommend


@dataclass(frozen=True)
class SyntheticMetaBenchmark:
    """Seeded meta-benchmark with a bilinear utility between dataset and metric embeddings.

    Dataset and metric embeddings each get ``dim // 2`` coordinates, so the
    concatenated ranking feature has ``dim`` entries. ``weights`` defaults
    to a standard normal draw from ``seed``.
    """

    n_queries: int = 200
    n_items: int = 9
    dim: int = 16
    weights: tuple | None = None
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_queries < 2 or self.n_items < 2:
            raise DataError("need at least 2 queries and 2 items")
        if self.dim < 2 or self.dim % 2:
            raise DataError("dim must be an even number >= 2")
        if self.weights is not None and len(self.weights) != self.dim // 2:
            raise DataError(f"weights must have {self.dim // 2} entries")
        if self.noise < 0:
            raise DataError("noise must be >= 0")


def synthetic_utility(bench: SyntheticMetaBenchmark):
    """Noiseless utilities plus the raw draws: ``(U, D, S, eps)``."""
    rng = np.random.default_rng(bench.seed)
    h = bench.dim // 2
    w = rng.standard_normal(h)
    if bench.weights is not None:
        w = np.asarray(bench.weights, dtype=np.float64)
    D = rng.standard_normal((bench.n_queries, h))
    S = rng.standard_normal((bench.n_items, h))
    eps = rng.standard_normal((bench.n_queries, bench.n_items))
    return (D * w) @ S.T, D, S, eps


def generate_synthetic(bench: SyntheticMetaBenchmark) -> tuple[MetaTaskTable, EmbeddingCorpus]:
    """Table ``clip(tanh(d_j' diag(w) s_k + noise * eps), -1, 1)`` and its embedding corpus.

    Names are zero-padded (``q007``, ``m3``) so sorted order is generation order.
    """
    U, D, S, eps = synthetic_utility(bench)
    tau = np.clip(np.tanh(U + bench.noise * eps), -1.0, 1.0)
    qw = len(str(bench.n_queries - 1))
    mw = len(str(bench.n_items - 1))
    datasets = [f"q{j:0{qw}d}" for j in range(bench.n_queries)]
    metrics = [f"m{k:0{mw}d}" for k in range(bench.n_items)]
    corpus = EmbeddingCorpus()
    for name, v in zip(datasets, D):
        corpus.add(EmbeddingRecord(name, "dataset", v))
    for name, v in zip(metrics, S):
        corpus.add(EmbeddingRecord(name, "metric", v))
    return MetaTaskTable(datasets, metrics, tau), corpus


# ---------------------------------------------------------------- configuration

LODO_FORMAT = "tmeta-lodo/1"

DEFAULT_GRIDS: dict[str, dict[str, list]] = {
    "metarank_gbdt": {"n_trees": [50, 100, 200], "max_depth": [2, 3, 4], "learning_rate": [0.05, 0.1, 0.3]},
    "isac_kmeans": {"k": [2, 3, 4]},
    "alors_mf": {"r": [2, 3, 4]},
}


@dataclass
class LodoConfig:
    table: MetaTaskTable
    embeddings: EmbeddingCorpus | None
    selectors: list[SelectorSpec]
    # selector label -> {param: values}; labels absent here use DEFAULT_GRIDS for their kind
    grid: dict[str, dict[str, list]] = field(default_factory=dict)
    n_validation: int = 3
    seed: int = 0
    metric_subset: list[str] | None = None

    def __post_init__(self):
        J = len(self.table.datasets)
        if not 1 <= self.n_validation < J - 1:
            raise DataError(f"n_validation={self.n_validation} must be in [1, J-1) with J={J}")
        labels = [s.label for s in self.selectors]
        if not labels:
            raise DataError("no selectors configured")
        if len(set(labels)) != len(labels):
            raise DataError(f"duplicate selector labels: {labels}")
        for label, g in self.grid.items():
            if label not in labels:
                raise DataError(f"grid given for unknown selector {label!r}")
            for key, values in g.items():
                if not list(values):
                    raise DataError(f"grid for {label!r}: empty value list for {key!r}")
        if self.metric_subset is not None:
            missing = set(self.metric_subset) - set(self.table.metrics)
            if missing:
                raise DataError(f"metric_subset names unknown metrics: {sorted(missing)}")

    def grid_for(self, spec: SelectorSpec) -> dict[str, list]:
        g = self.grid.get(spec.label)
        if g is None:
            g = DEFAULT_GRIDS.get(spec.kind, {})
        return {k: list(v) for k, v in g.items()}


def parse_lodo_config(obj: Mapping, table: MetaTaskTable, embeddings: EmbeddingCorpus | None) -> LodoConfig:
    """Build a :class:`LodoConfig` from its JSON form.

    Each selector entry is ``{"kind", "name"?, "hyper"?, "seed"?, "grid"?}``;
    a missing seed inherits the top-level one.
    """
    if obj.get("format", LODO_FORMAT) != LODO_FORMAT:
        raise DataError(f"unsupported config format {obj.get('format')!r}")
    unknown = set(obj) - {"format", "n_validation", "seed", "metric_subset", "selectors"}
    if unknown:
        raise DataError(f"unknown config keys: {sorted(unknown)}")
    seed = int(obj.get("seed", 0))
    specs, grid = [], {}
    for entry in obj.get("selectors", []):
        entry = dict(entry)
        entry.setdefault("seed", seed)
        g = entry.pop("grid", None)
        spec = SelectorSpec.from_dict(entry)
        if g is not None:
            grid[spec.label] = g
        specs.append(spec)
    return LodoConfig(table, embeddings, specs, grid, int(obj.get("n_validation", 3)), seed,
                      obj.get("metric_subset"))


def load_lodo_config(path, table, embeddings) -> LodoConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from None
    return parse_lodo_config(obj, table, embeddings)


def lodo_config_to_dict(cfg: LodoConfig) -> dict:
    sel = []
    for s in cfg.selectors:
        d = s.to_dict()
        if s.label in cfg.grid:
            d["grid"] = cfg.grid[s.label]
        sel.append(d)
    return {"format": LODO_FORMAT, "n_validation": cfg.n_validation, "seed": cfg.seed,
            "metric_subset": cfg.metric_subset, "selectors": sel}


# ---------------------------------------------------------------- LODO protocol

def validation_split(train_datasets: Sequence[str], n_validation: int, fold: int):
    """Last ``n_validation`` names of the sorted list after rotating it left by ``fold``."""
    names = sorted(train_datasets)
    r = fold % len(names)
    rotated = names[r:] + names[:r]
    val = rotated[-n_validation:]
    return [n for n in names if n not in val], sorted(val)


def _assert_no_leak(held_out: str, table: MetaTaskTable, corpus: EmbeddingCorpus | None) -> None:
    assert held_out not in table.datasets, f"held-out {held_out!r} in training table"
    assert corpus is None or ("dataset", held_out) not in corpus, \
        f"held-out {held_out!r} embedding visible to training"


def _rec_ndcg(rec, table: MetaTaskTable, dataset: str, metrics: Sequence[str]) -> float:
    row = table.select([dataset], list(metrics)).tau[0]
    pos = {m: i for i, m in enumerate(metrics)}
    return ndcg([pos[m] for m in rec.metrics], descending_order(row))


def _embedding(corpus, name):
    if corpus is None or ("dataset", name) not in corpus:
        return None
    return corpus.get("dataset", name)


def _grid_settings(grid: Mapping[str, Sequence]):
    keys = list(grid)
    for values in itertools.product(*(grid[k] for k in keys)):
        yield dict(zip(keys, values))


def grid_search(spec: SelectorSpec, train: MetaTaskTable, validation: Sequence[str],
                grid: Mapping[str, Sequence], embeddings: EmbeddingCorpus | None = None,
                full_table: MetaTaskTable | None = None):
    """Best hyperparameters by mean validation NDCG; ties keep the first setting in enumeration order.

    ``train`` holds the fitting rows only; validation rows are read from
    ``full_table``. Settings whose fit is rejected (invalid hyperparameters)
    are skipped. Returns ``(best_hyper, scores)``.
    """
    settings = list(_grid_settings(grid)) if grid else []
    if not settings:
        raise DataError(f"empty grid for {spec.label}")
    source = full_table if full_table is not None else train
    best, best_score, scores = None, -np.inf, []
    for setting in settings:
        try:
            candidate = spec.with_hyper(**setting)
            fitted = fit_selector(candidate, train, embeddings)
        except DataError:
            scores.append((setting, None))
            continue
        vals = [_rec_ndcg(recommend(fitted, _embedding(embeddings, d), train.metrics, query_key=d),
                          source, d, train.metrics) for d in validation]
        score = float(np.mean(vals))
        scores.append((setting, score))
        if score > best_score:
            best, best_score = candidate.hyper, score
    if best is None:
        raise DataError(f"no valid setting in the grid for {spec.label}")
    return dict(best), scores


def _run_fold(cfg: LodoConfig, fold: int, held_out: str):
    table = cfg.table
    metrics = list(table.metrics if cfg.metric_subset is None else cfg.metric_subset)
    train_names = [d for d in sorted(table.datasets) if d != held_out]
    train_table = table.select(train_names, metrics)
    corpus = cfg.embeddings.without("dataset", held_out) if cfg.embeddings is not None else None
    fit_names, val_names = validation_split(train_names, cfg.n_validation, fold)
    fit_table = table.select(fit_names, metrics)
    query = _embedding(cfg.embeddings, held_out)
    picks = {}
    for spec in cfg.selectors:
        try:
            grid = cfg.grid_for(spec)
            if grid:
                _assert_no_leak(held_out, fit_table, corpus)
                hyper, _ = grid_search(spec, fit_table, val_names, grid, corpus, full_table=train_table)
                spec = SelectorSpec(spec.kind, hyper, spec.seed, spec.name)
            _assert_no_leak(held_out, train_table, corpus)
            fitted = fit_selector(spec, train_table, corpus)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UnseenMetricWarning)
                rec = recommend(fitted, query, list(table.metrics), cfg.embeddings.subset("metric", table.metrics)
                                if cfg.embeddings is not None else None, query_key=held_out)
        except DataError as exc:
            raise DataError(f"fold {fold} (held out {held_out}), selector {spec.label}: {exc}") from exc
        except (ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
            raise RuntimeError(f"fold {fold} (held out {held_out}), selector {spec.label}: {exc}") from exc
        picks[spec.label] = (rec.top, table.cell(held_out, rec.top))
    return picks


def rank_selections(datasets: Sequence[str], methods: Sequence[str],
                    achieved: Mapping[tuple[str, str], tuple[str, float]]) -> EvaluationReport:
    """Tie-averaged ranks of every method's achieved tau on each dataset, then mean ranks."""
    folds = []
    for d in datasets:
        taus = np.array([achieved[(m, d)][1] for m in methods])
        ranks = tie_average_ranks(taus)
        folds.append(FoldResult(d, {m: (achieved[(m, d)][0], float(t), float(r))
                                    for m, t, r in zip(methods, taus, ranks)}))
    averages = {m: float(np.mean([f.selections[m][2] for f in folds])) for m in methods}
    return EvaluationReport(list(methods), folds, averages)


def run_lodo(cfg: LodoConfig, threads: int = 1) -> EvaluationReport:
    """Leave-one-dataset-out evaluation of every configured selector."""
    held = sorted(cfg.table.datasets)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda fd: _run_fold(cfg, *fd), enumerate(held)))
    else:
        results = [_run_fold(cfg, f, d) for f, d in enumerate(held)]
    achieved = {(m, d): picks[m] for d, picks in zip(held, results) for m in picks}
    return rank_selections(held, [s.label for s in cfg.selectors], achieved)


def report_from_selections(table: MetaTaskTable, rows: Sequence[tuple[str, str, str]]) -> EvaluationReport:
    """Rank precomputed ``(method, dataset, selected_metric)`` choices against ``table``."""
    methods: list[str] = []
    achieved = {}
    for method, dataset, metric in rows:
        if method not in methods:
            methods.append(method)
        if (method, dataset) in achieved:
            raise DataError(f"duplicate selection for ({method}, {dataset})")
        achieved[(method, dataset)] = (metric, table.cell(dataset, metric))
    missing = [(m, d) for m in methods for d in table.datasets if (m, d) not in achieved]
    if missing:
        raise DataError(f"missing selection for {missing[0]}")
    return rank_selections(list(table.datasets), methods, achieved)


def load_selections(path) -> list[tuple[str, str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["method", "dataset", "selected_metric"]:
            raise DataError(f"{path}: expected header method,dataset,selected_metric[,tau_w]")
        return [(r[0], r[1], r[2]) for r in reader if r]


# ---------------------------------------------------------------- tau table

def build_tau_table(feature_sets: Mapping[tuple[str, str], LabeledFeatureSet],
                    accuracies: Mapping[tuple[str, str], float], metrics: Sequence[str],
                    cfg: MetricConfig = MetricConfig(), seed=0, external=None,
                    scheme: str = "hyperbolic_additive") -> MetaTaskTable:
    """Score every model zoo with every metric and correlate with fine-tuning accuracy."""
    datasets: list[str] = []
    models: dict[str, list[str]] = {}
    for d, m in feature_sets:
        if d not in models:
            datasets.append(d)
            models[d] = []
        models[d].append(m)
    if not datasets or not metrics:
        raise DataError("need at least one dataset and one metric")
    tau = np.empty((len(datasets), len(metrics)))
    for j, d in enumerate(datasets):
        ids = models[d]
        try:
            acc = np.array([float(accuracies[(d, m)]) for m in ids])
        except KeyError as exc:
            raise DataError(f"no accuracy for {exc.args[0]}") from None
        if not np.isfinite(acc).all():
            raise DataError(f"non-finite accuracy on dataset {d!r}")
        for k, metric in enumerate(metrics):
            try:
                sv = score_model_zoo([(m, feature_sets[(d, m)]) for m in ids], metric, cfg, seed,
                                     dataset=d, external=external, ground_truth=acc)
                tau[j, k] = weighted_kendall_tau(sv.scores, acc, scheme)
            except DataError as exc:
                raise DataError(f"cell ({d}, {metric}): {exc}") from exc
    return MetaTaskTable(datasets, list(metrics), tau)


# ---------------------------------------------------------------- reports

def box_stats(values) -> dict:
    """Median, quartiles (linear interpolation), 1.5 IQR whiskers and outliers."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise DataError("no values")
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo_fence) & (v <= hi_fence)]
    return {"median": float(med), "q1": float(q1), "q3": float(q3),
            "whisker_low": float(inside.min()), "whisker_high": float(inside.max()),
            "outliers": [float(x) for x in v if x < lo_fence or x > hi_fence]}


def _fmt(x: float) -> str:
    return repr(float(x))


def emit_report(report: EvaluationReport, out_dir, fmt: str = "csv") -> list[Path]:
    """Write ``per_dataset.csv``, ``mean_ranks.csv`` and ``boxstats.csv``; returns their paths."""
    if fmt != "csv":
        raise DataError(f"unsupported report format {fmt!r}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "per_dataset.csv", out / "mean_ranks.csv", out / "boxstats.csv"]
        with open(paths[0], "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dataset", "method", "selected_metric", "tau_w", "rank"])
            for f in report.per_fold:
                for m in report.methods:
                    metric, tau, rank = f.selections[m]
                    w.writerow([f.held_out, m, metric, _fmt(tau), _fmt(rank)])
        with open(paths[1], "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "mean_rank"])
            for m in report.methods:
                w.writerow([m, f"{report.averages[m]:.4f}"])
        with open(paths[2], "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "median", "q1", "q3", "whisker_low", "whisker_high", "outliers"])
            for m in report.methods:
                b = box_stats([f.selections[m][2] for f in report.per_fold])
                w.writerow([m, _fmt(b["median"]), _fmt(b["q1"]), _fmt(b["q3"]), _fmt(b["whisker_low"]),
                            _fmt(b["whisker_high"]), ";".join(_fmt(x) for x in b["outliers"])])
    except OSError as exc:
        raise DataError(f"cannot write report to {out}: {exc}") from exc
    return paths


def read_report(out_dir) -> EvaluationReport:
    """Inverse of :func:`emit_report` (from ``per_dataset.csv``)."""
    path = Path(out_dir) / "per_dataset.csv"
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    methods, folds = [], {}
    for r in rows:
        if r["method"] not in methods:
            methods.append(r["method"])
        folds.setdefault(r["dataset"], {})[r["method"]] = (r["selected_metric"], float(r["tau_w"]),
                                                           float(r["rank"]))
    per_fold = [FoldResult(d, s) for d, s in folds.items()]
    averages = {m: float(np.mean([f.selections[m][2] for f in per_fold])) for m in methods}
    return EvaluationReport(methods, per_fold, averages)
