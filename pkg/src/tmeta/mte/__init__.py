"""Transferability metrics and model-zoo scoring."""
from __future__ import annotations

import csv
import math
from typing import Mapping, Sequence

import numpy as np

from ..core import DataError, LabeledFeatureSet, ModelScoreVector
from .basic import gbc, h_score, leep, nce
from .config import MetricConfig
from .logme import evidence_fit, logme
from .nleep import fit_gmm, nleep, pca_reduce

NATIVE_METRICS = ("HScore", "NCE", "LEEP", "NLEEP", "LogME", "GBC")


class MetricError(DataError):
    """A metric failed on one model of a zoo."""

    def __init__(self, model_id, metric, cause):
        super().__init__(f"model {model_id!r}, metric {metric}: {cause}")
        self.model_id = model_id
        self.metric = metric


def _key(name: str) -> str:
    return name.replace("-", "").replace("_", "").lower()


_NATIVE = {_key(m): m for m in NATIVE_METRICS}


def native_name(metric: str) -> str | None:
    """Canonical native metric name for ``metric`` (``'H-Score'`` -> ``'HScore'``), else None."""
    return _NATIVE.get(_key(metric))


def compute_metric(metric: str, fs: LabeledFeatureSet, cfg: MetricConfig = MetricConfig(), seed=0) -> float:
    name = native_name(metric)
    if name is None:
        raise DataError(f"{metric!r} is not a native metric")
    if name == "HScore":
        return h_score(fs, cfg)
    if name == "NCE":
        return nce(fs)
    if name == "LEEP":
        return leep(fs)
    if name == "NLEEP":
        return nleep(fs, cfg, seed)
    if name == "LogME":
        return logme(fs, cfg)
    return gbc(fs, cfg)


def ingest_external_scores(path) -> dict[tuple[str, str, str], float]:
    """Read ``dataset,model,metric,score`` rows into a dict keyed by the first three."""
    out: dict[tuple[str, str, str], float] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["dataset", "model", "metric", "score"]:
            raise DataError(f"{path}: expected header dataset,model,metric,score, got {header}")
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"{path}: row {rowno}: expected 4 fields")
            key = (row[0], row[1], row[2])
            try:
                score = float(row[3])
            except ValueError:
                raise DataError(f"{path}: row {rowno}: bad score {row[3]!r}") from None
            if not math.isfinite(score):
                raise DataError(f"{path}: row {rowno}: non-finite score")
            if key in out:
                raise DataError(f"{path}: row {rowno}: duplicate key {key}")
            out[key] = score
    return out


def write_external_scores(scores: Mapping[tuple[str, str, str], float], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "model", "metric", "score"])
        for (d, m, k), v in scores.items():
            w.writerow([d, m, k, repr(float(v))])


def score_model_zoo(feature_sets: Sequence[tuple[str, LabeledFeatureSet]] | Mapping[str, LabeledFeatureSet],
                    metric: str, cfg: MetricConfig = MetricConfig(), seed=0, *,
                    dataset: str | None = None,
                    external: Mapping[tuple[str, str, str], float] | None = None,
                    ground_truth=None) -> ModelScoreVector:
    """Score every model of a zoo on one target dataset with one metric.

    Non-native metrics are looked up in ``external`` under
    ``(dataset, model, metric)``.
    """
    items = list(feature_sets.items()) if isinstance(feature_sets, Mapping) else list(feature_sets)
    if len(items) < 2:
        raise DataError("need at least 2 models")
    scores = []
    if native_name(metric) is None:
        if external is None or not any(k[2] == metric for k in external):
            raise DataError(f"no external score column for metric {metric!r}")
        for mid, _ in items:
            try:
                scores.append(external[(dataset, mid, metric)])
            except KeyError:
                raise MetricError(mid, metric, f"no external score for dataset {dataset!r}") from None
    else:
        for mid, fs in items:
            try:
                scores.append(compute_metric(metric, fs, cfg, seed))
            except (DataError, np.linalg.LinAlgError) as exc:
                raise MetricError(mid, metric, exc) from exc
    return ModelScoreVector([m for m, _ in items], np.array(scores), ground_truth)


__all__ = [
    "MetricConfig", "MetricError", "NATIVE_METRICS", "compute_metric", "evidence_fit", "fit_gmm",
    "gbc", "h_score", "ingest_external_scores", "leep", "logme", "native_name", "nce", "nleep",
    "pca_reduce", "score_model_zoo", "write_external_scores",
]
