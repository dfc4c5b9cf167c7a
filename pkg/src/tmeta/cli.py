"""``tmeta`` command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import (DEFAULT_EMBED_DIM, DataError, EmbeddingCorpus, EmbeddingRecord, load_corpus,
                   load_embeddings, load_feature_set, load_meta_task_table, save_embeddings,
                   save_meta_task_table)
from .embed_client import ENDPOINT_ENV, EndpointError, fetch_embeddings, resolve_endpoint
from .harness import (build_tau_table, emit_report, load_lodo_config, load_selections,
                      lodo_config_to_dict, report_from_selections, run_lodo)
from .mte import MetricConfig, ingest_external_scores, score_model_zoo
from .selectors import FittedSelector, SelectorSpec, UnknownSelectorError, fit_selector, recommend

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("tmeta.cli")


class UsageError(Exception):
    def __init__(self, message, usage=""):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}", self.format_usage())


def _log_config(name: str, **values) -> None:
    log.info("%s: %s", name, json.dumps(values, sort_keys=True, default=str))


def _read_jsonl(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
    return rows


def _descriptions(path):
    out = []
    for i, r in enumerate(_read_jsonl(path), start=1):
        try:
            out.append((str(r["name"]), str(r["kind"]), str(r["description"])))
        except (KeyError, TypeError):
            raise DataError(f"{path}: record {i} needs name, kind and description") from None
    return out


# ---------------------------------------------------------------- subcommands

def cmd_embed(args) -> int:
    if args.endpoint and args.from_file:
        raise UsageError("give exactly one of --endpoint / --from-file")
    items = _descriptions(args.input)
    endpoint = None if args.from_file else resolve_endpoint(args.endpoint)
    if not args.from_file and not endpoint:
        raise UsageError(f"need --endpoint, --from-file or ${ENDPOINT_ENV}")
    _log_config("embed", input=args.input, endpoint=endpoint, from_file=args.from_file, dim=args.dim,
                out=args.out)
    if args.from_file:
        source = EmbeddingCorpus(load_embeddings(args.from_file, args.dim))
        records = [EmbeddingRecord(name, kind, source.get(kind, name)) for name, kind, _ in items]
    else:
        records = fetch_embeddings(items, endpoint, dim=args.dim, max_inflight=min(4, args.threads))
    EmbeddingCorpus(records)   # rejects duplicate names
    save_embeddings(records, args.out)
    n_d = sum(r.kind == "dataset" for r in records)
    print(f"wrote {len(records)} records ({n_d} dataset, {len(records) - n_d} metric) to {args.out}")
    return EXIT_OK


def _load_zoo(path):
    """Manifest ``{"datasets": [{"name", "models": [{"id", "features", "labels", "probs"?, "accuracy"?}]}]}``."""
    base = Path(path).parent
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc.msg})") from None
    feature_sets, accuracies = {}, {}
    try:
        for ds in obj["datasets"]:
            for m in ds["models"]:
                key = (ds["name"], m["id"])
                if key in feature_sets:
                    raise DataError(f"{path}: duplicate model {key}")
                probs = base / m["probs"] if m.get("probs") else None
                feature_sets[key] = load_feature_set(base / m["features"], base / m["labels"], probs)
                if "accuracy" in m:
                    accuracies[key] = float(m["accuracy"])
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed zoo manifest ({exc})") from None
    return feature_sets, accuracies


def cmd_score(args) -> int:
    _log_config("score", zoo=args.zoo, metric=args.metric, dataset=args.dataset, seed=args.seed)
    feature_sets, accuracies = _load_zoo(args.zoo)
    datasets = list(dict.fromkeys(d for d, _ in feature_sets))
    dataset = args.dataset or (datasets[0] if len(datasets) == 1 else None)
    if dataset is None:
        raise UsageError(f"zoo has several datasets {datasets}; pick one with --dataset")
    if dataset not in datasets:
        raise DataError(f"dataset {dataset!r} not in zoo")
    models = [(m, fs) for (d, m), fs in feature_sets.items() if d == dataset]
    external = ingest_external_scores(args.external) if args.external else None
    sv = score_model_zoo(models, args.metric, MetricConfig(), args.seed, dataset=dataset, external=external)
    lines = ["model,score"] + [f"{m},{float(s)!r}" for m, s in zip(sv.model_ids, sv.scores)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_tau_table(args) -> int:
    metrics = [m for m in args.metrics.split(",") if m]
    _log_config("tau-table", zoo=args.zoo, metrics=metrics, seed=args.seed, out=args.out)
    feature_sets, accuracies = _load_zoo(args.zoo)
    external = ingest_external_scores(args.external) if args.external else None
    table = build_tau_table(feature_sets, accuracies, metrics, MetricConfig(), args.seed, external)
    save_meta_task_table(table, args.out)
    print(f"wrote {len(table.datasets)}x{len(table.metrics)} table to {args.out}")
    return EXIT_OK


def _parse_hyper(pairs):
    hyper = {}
    for p in pairs or []:
        if "=" not in p:
            raise UsageError(f"--hyper expects key=value, got {p!r}")
        k, v = p.split("=", 1)
        try:
            hyper[k] = json.loads(v)
        except json.JSONDecodeError:
            hyper[k] = v
    return hyper


def cmd_train(args) -> int:
    hyper = _parse_hyper(args.hyper)
    if args.metric:
        hyper["metric"] = args.metric
    spec = SelectorSpec.from_dict({"kind": args.kind, "hyper": hyper, "seed": args.seed, "name": args.name})
    _log_config("train", table=args.table, embeddings=args.embeddings, spec=spec.to_dict(), seed=args.seed)
    table = load_meta_task_table(args.table)
    if args.metric_subset:
        table = table.select(metrics=args.metric_subset.split(","))
    corpus = load_corpus(args.embeddings) if args.embeddings else None
    fitted = fit_selector(spec, table, corpus)
    Path(args.out).write_text(fitted.to_json() + "\n", encoding="utf-8")
    print(f"wrote {spec.kind} selector trained on {len(table.datasets)} datasets x "
          f"{len(table.metrics)} metrics to {args.out}")
    return EXIT_OK


def _query_vector(value: str, corpora):
    text = value.strip()
    if text.startswith("[") or "," in text:
        try:
            vec = json.loads(text if text.startswith("[") else f"[{text}]")
            return np.asarray(vec, dtype=np.float64), None
        except (json.JSONDecodeError, ValueError):
            raise DataError(f"cannot parse dataset embedding {value!r}") from None
    for c in corpora:
        if c is not None and ("dataset", text) in c:
            return np.asarray(c.get("dataset", text), dtype=np.float64), text
    raise DataError(f"no dataset embedding named {text!r}")


def cmd_rank(args) -> int:
    _log_config("rank", model=args.model, dataset_embedding=args.dataset_embedding, metrics=args.metrics)
    fitted = FittedSelector.from_json(Path(args.model).read_text(encoding="utf-8"))
    metric_corpus = load_corpus(args.metrics) if args.metrics else None
    extra = load_corpus(args.embeddings) if args.embeddings else None
    query, name = (None, None)
    if args.dataset_embedding is not None:
        query, name = _query_vector(args.dataset_embedding, [extra, metric_corpus])
    candidates = metric_corpus.names("metric") if metric_corpus is not None else None
    rec = recommend(fitted, query, candidates, metric_corpus, query_key=name or args.dataset_embedding)
    for m, s in zip(rec.metrics, rec.scores):
        flag = "\tunseen" if m in rec.unseen else ""
        print(f"{m}\t{float(s):.6g}{flag}")
    return EXIT_OK


def cmd_lodo(args) -> int:
    table = load_meta_task_table(args.table)
    corpus = load_corpus(args.embeddings) if args.embeddings else None
    cfg = load_lodo_config(args.config, table, corpus)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.selectors = [SelectorSpec(s.kind, s.hyper, args.seed, s.name) for s in cfg.selectors]
    _log_config("lodo", table=args.table, embeddings=args.embeddings, threads=args.threads,
                config=lodo_config_to_dict(cfg))
    report = run_lodo(cfg, threads=args.threads)
    emit_report(report, args.out)
    for m in report.methods:
        print(f"{m}\t{report.averages[m]:.4f}")
    return EXIT_OK


def cmd_report(args) -> int:
    _log_config("report", table=args.table, selections=args.selections, out=args.out)
    table = load_meta_task_table(args.table)
    report = report_from_selections(table, load_selections(args.selections))
    emit_report(report, args.out)
    for m in report.methods:
        print(f"{m}\t{report.averages[m]:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------- wiring

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tmeta", description="Task-aware selection of transferability metrics.")
    p.add_argument("--version", action="version", version=f"tmeta {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads (default: machine cores); outputs do not depend on it")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("embed", help="embed dataset/metric descriptions")
    e.add_argument("--input", required=True, help="descriptions JSONL (name, kind, description)")
    e.add_argument("--endpoint", "--embed-endpoint", dest="endpoint",
                   help=f"embedding endpoint URL (default ${ENDPOINT_ENV})")
    e.add_argument("--from-file", help="take vectors from an existing corpus instead")
    e.add_argument("--dim", type=int, default=DEFAULT_EMBED_DIM)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_embed)

    s = sub.add_parser("score", help="score one model zoo with one metric")
    s.add_argument("--zoo", required=True, help="zoo manifest JSON")
    s.add_argument("--metric", required=True)
    s.add_argument("--dataset")
    s.add_argument("--external", help="CSV dataset,model,metric,score for non-native metrics")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_score)

    t = sub.add_parser("tau-table", help="weighted-tau table from model zoos and accuracies")
    t.add_argument("--zoo", required=True)
    t.add_argument("--metrics", required=True, help="comma-separated metric names")
    t.add_argument("--external")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_tau_table)

    tr = sub.add_parser("train", help="fit a selector on a tau table")
    tr.add_argument("--table", required=True)
    tr.add_argument("--embeddings")
    tr.add_argument("--kind", default="metarank_gbdt")
    tr.add_argument("--hyper", action="append", metavar="KEY=VALUE")
    tr.add_argument("--metric", help="metric for --kind fixed")
    tr.add_argument("--metric-subset", help="train on these metric columns only")
    tr.add_argument("--name")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--out", required=True)
    tr.set_defaults(func=cmd_train)

    r = sub.add_parser("rank", help="rank metrics for a dataset with a fitted selector")
    r.add_argument("--model", required=True)
    r.add_argument("--dataset-embedding", help="dataset name in a corpus, or a vector '[..]' / 'a,b,c'")
    r.add_argument("--metrics", help="corpus whose metric records are the candidates")
    r.add_argument("--embeddings", help="extra corpus for looking up the dataset name")
    r.set_defaults(func=cmd_rank)

    lo = sub.add_parser("lodo", help="leave-one-dataset-out benchmark")
    lo.add_argument("--table", required=True)
    lo.add_argument("--embeddings")
    lo.add_argument("--config", required=True)
    lo.add_argument("--seed", type=int, help="override the config seed")
    lo.add_argument("--out", required=True)
    lo.set_defaults(func=cmd_lodo)

    rp = sub.add_parser("report", help="rank tables from per-dataset selections")
    rp.add_argument("--table", required=True)
    rp.add_argument("--selections", required=True, help="CSV method,dataset,selected_metric")
    rp.add_argument("--out", required=True)
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"{exc}\n{exc.usage}", file=sys.stderr, end="")
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(name)s: %(message)s", force=True)
    if args.threads < 1:
        print("tmeta: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, UnknownSelectorError) as exc:
        print(f"tmeta {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"tmeta {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (EndpointError, RuntimeError, ArithmeticError, AssertionError, np.linalg.LinAlgError) as exc:
        print(f"tmeta {args.command}: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
