"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Kernel timings run in-process on both modules; the end-to-end GBDT fit runs
in a subprocess per backend so the import-time backend switch is honoured.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from tmeta import _kernels_py

try:
    from tmeta import _kernels
except ImportError:
    _kernels = None


def tau_case(rng, n=9):
    s, t = rng.permutation(n).astype(float), rng.permutation(n).astype(float)
    return (s, t, 1.0 / (np.argsort(np.argsort(-t)) + 1.0))


def pair_case(rng, k=9):
    p, t = rng.normal(size=k), rng.normal(size=k)
    rel = np.argsort(np.argsort(t)).astype(np.int64)
    return (p, rel.astype(np.float64), rel, True, 0.37, np.zeros(k), np.zeros(k))


def split_case(rng, n=2000, f=32):
    X = rng.normal(size=(n, f))
    presorted = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))
    Xs = np.ascontiguousarray(np.take_along_axis(X.T, presorted, axis=1))
    idx = np.arange(n, dtype=np.int64)
    mask = np.ones(n, dtype=np.uint8)
    return (Xs, presorted, mask, idx, rng.normal(size=n), rng.uniform(0.1, 1, n), 2, 1.0)


CASES = {
    "tau_sums (n=9)": ("tau_sums", tau_case, 2000),
    "pair_gradients (k=9)": ("pair_gradients", pair_case, 2000),
    "best_split (2000x32)": ("best_split", split_case, 5),
}

_TRAIN = """
import time
from importlib import resources
from tmeta.core import load_corpus, load_meta_task_table
from tmeta.ltr import GbdtParams, train
from tmeta.selectors import ranking_instances
data = resources.files("tmeta") / "data"
table = load_meta_task_table(data / "synthetic_tau.csv")
inst = ranking_instances(table, load_corpus(data / "synthetic_embeddings.jsonl"))
t0 = time.perf_counter()
train(inst, GbdtParams(n_trees=50, max_depth=4, learning_rate=0.3))
print(time.perf_counter() - t0)
"""


def time_call(fn, args, number, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = {"python": _kernels_py}
    if _kernels is not None:
        backends["cython"] = _kernels
    else:
        print("compiled kernels not built; timing the fallback only", file=sys.stderr)
    rng = np.random.default_rng(0)
    print(f"{'case':<28}" + "".join(f"{b:>14}" for b in backends) + f"{'speedup':>10}")
    for label, (name, make, number) in CASES.items():
        case = make(rng)
        secs = {b: time_call(getattr(mod, name), case, number, args.repeat) for b, mod in backends.items()}
        speed = f"{secs['python'] / secs['cython']:>9.1f}x" if "cython" in secs else ""
        print(f"{label:<28}" + "".join(f"{secs[b] * 1e6:>11.1f} us" for b in backends) + speed)
    fits = {}
    for b in backends:
        env = dict(os.environ, TMETA_PURE_PYTHON="1" if b == "python" else "0")
        out = subprocess.run([sys.executable, "-c", _TRAIN], env=env, capture_output=True, text=True, check=True)
        fits[b] = float(out.stdout.strip())
    speed = f"{fits['python'] / fits['cython']:>9.1f}x" if "cython" in fits else ""
    print(f"{'GBDT fit (250 q, 50 trees)':<28}" + "".join(f"{fits[b]:>12.2f} s" for b in backends) + speed)


if __name__ == "__main__":
    main()
