"""Regenerate the shipped synthetic meta-benchmark (250 queries x 9 metrics, dim 16, seed 0).

The first 200 queries in name order are the training split, the last 50
the held-out split.

    python3 scripts/make_synthetic_fixture.py [--out-dir src/tmeta/data]
"""
from __future__ import annotations

import argparse
from pathlib import Path

from tmeta.core import save_embeddings, save_meta_task_table
from tmeta.harness import SyntheticMetaBenchmark, generate_synthetic

DATA = Path(__file__).resolve().parents[1] / "src" / "tmeta" / "data"
BENCH = SyntheticMetaBenchmark(n_queries=250, n_items=9, dim=16, noise=0.05, seed=0)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", type=Path, default=DATA)
    args = ap.parse_args(argv)
    table, corpus = generate_synthetic(BENCH)
    save_meta_task_table(table, args.out_dir / "synthetic_tau.csv")
    save_embeddings(list(corpus), args.out_dir / "synthetic_embeddings.jsonl")
    print(f"wrote {len(table.datasets)}x{len(table.metrics)} synthetic table to {args.out_dir}")


if __name__ == "__main__":
    main()
