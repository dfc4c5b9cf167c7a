"""Domain types and on-disk formats.

Every loader validates its input eagerly and raises :class:`DataError` with a
location (line or row number) when something is off. Records are immutable
once built.
"""
from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_EMBED_DIM = 768
KINDS = ("dataset", "metric")


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class DegenerateWarning(UserWarning):
    """Emitted when a computation falls back to a defined value on degenerate input."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EmbeddingRecord:
    name: str
    kind: str
    vector: np.ndarray

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown kind {self.kind!r} for {self.name!r}")
        v = np.asarray(self.vector, dtype=np.float32)
        if v.ndim != 1 or v.size == 0:
            raise DataError(f"vector for {self.name!r} must be a non-empty 1-D array")
        if not np.all(np.isfinite(v)):
            raise DataError(f"vector for {self.name!r} has non-finite entries")
        object.__setattr__(self, "vector", _frozen(v.copy()))

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


class EmbeddingCorpus:
    """Embedding records indexed by ``(kind, name)`` with a single dimension."""

    def __init__(self, records: Iterable[EmbeddingRecord] = (), dim: int | None = None):
        self._records: dict[tuple[str, str], EmbeddingRecord] = {}
        self.dim = dim
        for r in records:
            self.add(r)

    def add(self, record: EmbeddingRecord) -> None:
        if self.dim is None:
            self.dim = record.dim
        elif record.dim != self.dim:
            raise DataError(
                f"dimension mismatch for {record.name!r}: {record.dim} != {self.dim}")
        key = (record.kind, record.name)
        if key in self._records:
            raise DataError(f"duplicate {record.kind} record {record.name!r}")
        self._records[key] = record

    def __len__(self):
        return len(self._records)

    def __iter__(self):
        return iter(self._records.values())

    def __contains__(self, key):
        return key in self._records

    def get(self, kind: str, name: str) -> np.ndarray:
        try:
            return self._records[(kind, name)].vector
        except KeyError:
            raise DataError(f"no {kind} embedding for {name!r}") from None

    def names(self, kind: str) -> list[str]:
        return [n for (k, n) in self._records if k == kind]

    def subset(self, kind: str, names: Sequence[str]) -> "EmbeddingCorpus":
        keep = set(names)
        return EmbeddingCorpus(
            [r for r in self if r.kind != kind or r.name in keep], dim=self.dim)

    def without(self, kind: str, name: str) -> "EmbeddingCorpus":
        return EmbeddingCorpus(
            [r for r in self if (r.kind, r.name) != (kind, name)], dim=self.dim)


def load_embeddings(path, dim: int | None = None) -> list[EmbeddingRecord]:
    """Read a JSON-lines embedding corpus.

    ``dim`` pins the expected dimension; otherwise the first record sets it.
    """
    records = []
    corpus = EmbeddingCorpus(dim=dim)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rec = EmbeddingRecord(obj["name"], obj["kind"], np.asarray(obj["vector"], dtype=np.float32))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}: line {lineno}: malformed record ({exc})") from None
            try:
                corpus.add(rec)
            except DataError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
            records.append(rec)
    return records


def load_corpus(path, dim: int | None = None) -> EmbeddingCorpus:
    return EmbeddingCorpus(load_embeddings(path, dim), dim=dim)


def save_embeddings(records: Iterable[EmbeddingRecord], path) -> None:
    # float32 -> python float is exact, and json repr round-trips doubles
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps({"name": r.name, "kind": r.kind,
                                 "vector": [float(x) for x in r.vector]}) + "\n")


@dataclass(frozen=True)
class LabeledFeatureSet:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    source_probs: np.ndarray | None = None

    def __post_init__(self):
        F = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if F.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        n, d = F.shape
        if n < 2 or d < 1:
            raise DataError(f"need n >= 2 and d >= 1, got {F.shape}")
        if not np.all(np.isfinite(F)):
            raise DataError("features contain non-finite values")
        if y.shape != (n,):
            raise DataError(f"expected {n} labels, got shape {y.shape}")
        if not np.issubdtype(y.dtype, np.integer):
            raise DataError("labels must be integers")
        C = int(self.n_classes)
        if C < 1:
            raise DataError("n_classes must be >= 1")
        bad = np.flatnonzero((y < 0) | (y >= C))
        if bad.size:
            raise DataError(f"label {int(y[bad[0]])} at row {int(bad[0])} out of range [0, {C})")
        P = self.source_probs
        if P is not None:
            P = np.asarray(P, dtype=np.float64)
            if P.ndim != 2 or P.shape[0] != n:
                raise DataError(f"source_probs must have {n} rows")
            if not np.all(np.isfinite(P)):
                raise DataError("source_probs contain non-finite values")
            if np.any(P < 0) or np.any(P > 1):
                row = int(np.flatnonzero(np.any((P < 0) | (P > 1), axis=1))[0])
                raise DataError(f"source_probs row {row} has entries outside [0, 1]")
            dev = np.abs(P.sum(axis=1) - 1.0)
            if np.any(dev > 1e-5):
                row = int(np.flatnonzero(dev > 1e-5)[0])
                raise DataError(f"source_probs row {row} sums to {P[row].sum():.6g}, not 1")
            P = _frozen(P)
        object.__setattr__(self, "features", _frozen(F))
        object.__setattr__(self, "labels", _frozen(y.astype(np.int64)))
        object.__setattr__(self, "n_classes", C)
        object.__setattr__(self, "source_probs", P)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def permuted(self, perm) -> "LabeledFeatureSet":
        perm = np.asarray(perm)
        P = None if self.source_probs is None else self.source_probs[perm]
        return LabeledFeatureSet(self.features[perm], self.labels[perm], self.n_classes, P)


_HDR = struct.Struct("<II")


def _read_blob(path, magic: bytes):
    raw = Path(path).read_bytes()
    if raw[:len(magic)] != magic:
        raise DataError(f"{path}: bad magic, expected {magic.decode()}")
    off = len(magic)
    if len(raw) < off + _HDR.size:
        raise DataError(f"{path}: truncated header")
    a, b = _HDR.unpack_from(raw, off)
    return raw[off + _HDR.size:], a, b


def _check_len(path, payload: bytes, count: int, itemsize: int) -> None:
    if len(payload) != count * itemsize:
        raise DataError(f"{path}: truncated payload ({len(payload)} bytes, expected {count * itemsize})")


def read_matrix(path, magic=b"FMAT1") -> np.ndarray:
    payload, n, d = _read_blob(path, magic)
    _check_len(path, payload, n * d, 4)
    return np.frombuffer(payload, dtype="<f4").reshape(n, d).astype(np.float64)


def write_matrix(path, matrix, magic=b"FMAT1") -> None:
    M = np.ascontiguousarray(matrix, dtype="<f4")
    if M.ndim != 2:
        raise DataError("matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(magic + _HDR.pack(*M.shape) + M.tobytes())


def read_labels(path):
    payload, n, C = _read_blob(path, b"LBLS1")
    _check_len(path, payload, n, 4)
    return np.frombuffer(payload, dtype="<u4").astype(np.int64), C


def write_labels(path, labels, n_classes: int) -> None:
    y = np.ascontiguousarray(labels, dtype="<u4")
    with open(path, "wb") as fh:
        fh.write(b"LBLS1" + _HDR.pack(y.shape[0], n_classes) + y.tobytes())


def load_feature_set(features_path, labels_path, probs_path=None) -> LabeledFeatureSet:
    F = read_matrix(features_path)
    y, C = read_labels(labels_path)
    P = None if probs_path is None else read_matrix(probs_path, magic=b"PROB1")
    return LabeledFeatureSet(F, y, C, P)


def save_feature_set(fs: LabeledFeatureSet, features_path, labels_path, probs_path=None) -> None:
    write_matrix(features_path, fs.features)
    write_labels(labels_path, fs.labels, fs.n_classes)
    if probs_path is not None and fs.source_probs is not None:
        write_matrix(probs_path, fs.source_probs, magic=b"PROB1")


@dataclass(frozen=True)
class MetaTaskTable:
    """Dense dataset x metric matrix of weighted-tau values."""

    datasets: tuple[str, ...]
    metrics: tuple[str, ...]
    tau: np.ndarray

    def __post_init__(self):
        datasets, metrics = tuple(self.datasets), tuple(self.metrics)
        tau = np.array(self.tau, dtype=np.float64)
        if tau.shape != (len(datasets), len(metrics)):
            raise DataError(f"tau shape {tau.shape} does not match {len(datasets)}x{len(metrics)}")
        for names, what in ((datasets, "dataset"), (metrics, "metric")):
            if len(set(names)) != len(names):
                raise DataError(f"duplicate {what} names")
        if not np.all(np.isfinite(tau)):
            raise DataError("tau contains missing or non-finite cells")
        if np.any(np.abs(tau) > 1.0):
            j, k = np.argwhere(np.abs(tau) > 1.0)[0]
            raise DataError(f"tau[{datasets[j]}, {metrics[k]}] = {tau[j, k]} outside [-1, 1]")
        object.__setattr__(self, "datasets", datasets)
        object.__setattr__(self, "metrics", metrics)
        object.__setattr__(self, "tau", _frozen(tau))

    @property
    def shape(self):
        return self.tau.shape

    def row(self, dataset: str) -> np.ndarray:
        return self.tau[self.datasets.index(dataset)]

    def cell(self, dataset: str, metric: str) -> float:
        return float(self.tau[self.datasets.index(dataset), self.metrics.index(metric)])

    def ground_truth_order(self, dataset: str) -> list[int]:
        """Metric indices sorted by descending tau; ties keep list order."""
        return descending_order(self.row(dataset))

    def select(self, datasets: Sequence[str] | None = None,
               metrics: Sequence[str] | None = None) -> "MetaTaskTable":
        ds = list(self.datasets if datasets is None else datasets)
        ms = list(self.metrics if metrics is None else metrics)
        rows = [self.datasets.index(d) for d in ds]
        cols = [self.metrics.index(m) for m in ms]
        return MetaTaskTable(ds, ms, self.tau[np.ix_(rows, cols)])


def descending_order(values) -> list[int]:
    v = np.asarray(values, dtype=np.float64)
    # stable sort on the negation keeps index order among ties
    return [int(i) for i in np.argsort(-v, kind="stable")]


def load_meta_task_table(path) -> MetaTaskTable:
    with open(path, encoding="utf-8", newline="") as fh:
        return _parse_table(csv.reader(fh), str(path))


def parse_meta_task_table(text: str) -> MetaTaskTable:
    return _parse_table(csv.reader(io.StringIO(text)), "<string>")


def _parse_table(reader, where: str) -> MetaTaskTable:
    header = next(reader, None)
    if header != ["dataset", "metric", "tau_w"]:
        raise DataError(f"{where}: expected header dataset,metric,tau_w, got {header}")
    cells: dict[tuple[str, str], float] = {}
    datasets: list[str] = []
    metrics: list[str] = []
    for rowno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise DataError(f"{where}: row {rowno}: expected 3 fields")
        d, m, v = row
        try:
            tau = float(v)
        except ValueError:
            raise DataError(f"{where}: row {rowno}: bad tau value {v!r}") from None
        if not math.isfinite(tau) or abs(tau) > 1.0:
            raise DataError(f"{where}: row {rowno}: tau {v} outside [-1, 1]")
        if (d, m) in cells:
            raise DataError(f"{where}: row {rowno}: duplicate cell ({d}, {m})")
        cells[(d, m)] = tau
        if d not in datasets:
            datasets.append(d)
        if m not in metrics:
            metrics.append(m)
    missing = [(d, m) for d in datasets for m in metrics if (d, m) not in cells]
    if missing:
        raise DataError(f"{where}: missing cell {missing[0]} ({len(missing)} missing in total)")
    tau = np.array([[cells[(d, m)] for m in metrics] for d in datasets])
    return MetaTaskTable(datasets, metrics, tau)


def save_meta_task_table(table: MetaTaskTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "metric", "tau_w"])
        for j, d in enumerate(table.datasets):
            for k, m in enumerate(table.metrics):
                w.writerow([d, m, repr(float(table.tau[j, k]))])


@dataclass(frozen=True)
class ModelScoreVector:
    model_ids: tuple[str, ...]
    scores: np.ndarray
    ground_truth: np.ndarray | None = None

    def __post_init__(self):
        ids = tuple(self.model_ids)
        s = np.asarray(self.scores, dtype=np.float64)
        if len(ids) < 2 or s.shape != (len(ids),):
            raise DataError("need at least 2 models with one score each")
        if not np.all(np.isfinite(s)):
            raise DataError("scores must be finite")
        gt = self.ground_truth
        if gt is not None:
            gt = np.asarray(gt, dtype=np.float64)
            if gt.shape != s.shape or not np.all(np.isfinite(gt)):
                raise DataError("ground_truth must be finite and match scores in length")
            gt = _frozen(gt)
        object.__setattr__(self, "model_ids", ids)
        object.__setattr__(self, "scores", _frozen(s))
        object.__setattr__(self, "ground_truth", gt)


@dataclass
class FoldResult:
    held_out: str
    # method -> (selected metric, achieved tau, tie-averaged rank)
    selections: dict[str, tuple[str, float, float]] = field(default_factory=dict)


@dataclass
class EvaluationReport:
    methods: list[str]
    per_fold: list[FoldResult]
    averages: dict[str, float]
