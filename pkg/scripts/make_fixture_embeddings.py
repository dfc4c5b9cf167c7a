"""Regenerate the shipped 768-d fixture embeddings from the description texts.

No sentence encoder is available offline, so the fixtures are deterministic
text-derived stand-ins: TF-IDF over word 1-2 grams and character 3-5 grams
(fitted on every description, ablation variants included), projected to 768
dimensions with a fixed Gaussian matrix and L2-normalised. Replace them with
real encoder output via ``tmeta embed --endpoint``.

    python3 scripts/make_fixture_embeddings.py [--out-dir src/tmeta/data]

Needs scikit-learn (``pip install .[fixtures]``).
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np
from scipy.sparse import hstack
from sklearn.feature_extraction.text import TfidfVectorizer

from tmeta.core import DEFAULT_EMBED_DIM, EmbeddingRecord, save_embeddings

DATA = Path(__file__).resolve().parents[1] / "src" / "tmeta" / "data"
SEED = 20240601


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def embed_texts(texts, dim=DEFAULT_EMBED_DIM, seed=SEED):
    words = TfidfVectorizer(ngram_range=(1, 2), sublinear_tf=True, lowercase=True)
    chars = TfidfVectorizer(analyzer="char_wb", ngram_range=(3, 5), sublinear_tf=True)
    M = hstack([words.fit_transform(texts), chars.fit_transform(texts)]).tocsr()
    P = np.random.default_rng(seed).standard_normal((M.shape[1], dim)) / np.sqrt(dim)
    Z = np.asarray(M @ P)
    return Z / np.linalg.norm(Z, axis=1, keepdims=True)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", type=Path, default=DATA)
    args = ap.parse_args(argv)

    base = read_jsonl(DATA / "descriptions.jsonl")
    variants = read_jsonl(DATA / "cifar10_ablation.jsonl")
    texts = [r["description"] for r in base] + [v["description"] for v in variants]
    Z = embed_texts(texts)
    base_vecs = dict(zip(((r["kind"], r["name"]) for r in base), Z[: len(base)]))

    records = [EmbeddingRecord(r["name"], r["kind"], base_vecs[(r["kind"], r["name"])]) for r in base]
    save_embeddings(records, args.out_dir / "paper_embeddings.jsonl")
    for v, z in zip(variants, Z[len(base):]):
        swapped = [EmbeddingRecord(r.name, r.kind, z) if (r.kind, r.name) == (v["kind"], v["name"]) else r
                   for r in records]
        save_embeddings(swapped, args.out_dir / f"ablation_{v['variant']}_embeddings.jsonl")
    print(f"wrote {1 + len(variants)} corpora to {args.out_dir}")


if __name__ == "__main__":
    main()
