"""Reference implementations of the inner loops (numpy / plain Python).

Used when the compiled ``_kernels`` extension is unavailable or when
``TMETA_PURE_PYTHON=1`` is set. Results must match the compiled versions
exactly, including tie-breaking.
"""
import math

import numpy as np

MIN_GAIN = 1e-12
HESS_FLOOR = 1e-6


def tau_sums(s, t, a):
    """Return ``(num, den_s, den_t)`` for pair weights ``a[i] + a[j]``."""
    s, t, a = s.tolist(), t.tolist(), a.tolist()
    n = len(s)
    num = den_s = den_t = 0.0
    for i in range(n - 1):
        si, ti, ai = s[i], t[i], a[i]
        for j in range(i + 1, n):
            w = ai + a[j]
            ds = si - s[j]
            dt = ti - t[j]
            sg_s = (ds > 0) - (ds < 0)
            sg_t = (dt > 0) - (dt < 0)
            num += w * sg_s * sg_t
            den_s += w * sg_s * sg_s
            den_t += w * sg_t * sg_t
    return num, den_s, den_t


def pair_gradients(pred, target, rel, use_ndcg, inv_idcg, grad, hess):
    """Accumulate RankNet / LambdaRank gradients for one query in place.

    ``pred`` is the current score vector, ``target`` decides which item of a
    pair is better and ``rel`` holds the integer grades used for the swap
    delta. With ``use_ndcg`` false every pair has unit weight.
    """
    k = pred.shape[0]
    order = np.argsort(-pred, kind="stable")
    pos = np.empty(k, dtype=np.int64)
    pos[order] = np.arange(k)
    for i in range(k):
        for j in range(k):
            if not target[i] > target[j]:
                continue
            if use_ndcg:
                gain = (2.0 ** rel[i]) - (2.0 ** rel[j])
                disc = 1.0 / math.log2(pos[i] + 2.0) - 1.0 / math.log2(pos[j] + 2.0)
                w = abs(gain * disc) * inv_idcg
            else:
                w = 1.0
            if w == 0.0:
                continue
            rho = 1.0 / (1.0 + math.exp(pred[i] - pred[j]))
            lam = w * rho
            grad[i] -= lam
            grad[j] += lam
            h = w * rho * (1.0 - rho)
            hess[i] += h
            hess[j] += h


def best_split(Xs, presorted, in_node, idx, grad, hess, min_leaf, reg_lambda):
    """Exact greedy split over the samples ``idx`` (ascending indices).

    ``presorted[f]`` is a stable ascending sort of all rows by feature ``f``
    and ``Xs[f, r] = X[presorted[f, r], f]``; ``in_node`` flags the rows of
    ``idx``. Returns ``(feature, threshold, gain)``; ``feature == -1`` when no
    split satisfies ``min_leaf`` or improves the objective. Ties in gain go to
    the lowest feature index, then the lowest threshold.
    """
    n = idx.shape[0]
    if n < 2 * min_leaf:
        return -1, 0.0, 0.0
    F = presorted.shape[0]
    mask = in_node.view(bool)[presorted]
    rows = presorted[mask].reshape(F, n)
    xs = Xs[mask].reshape(F, n)
    gl = np.cumsum(grad[rows], axis=1)[:, :-1]
    hl = np.cumsum(hess[rows], axis=1)[:, :-1]
    # sequential sums in index order; the compiled kernel does the same
    G = np.cumsum(grad[idx])[-1]
    H = np.cumsum(hess[idx])[-1]
    gr = G - gl
    hr = H - hl
    gain = (gl * gl / np.maximum(hl + reg_lambda, HESS_FLOOR)
            + gr * gr / np.maximum(hr + reg_lambda, HESS_FLOOR)
            - G * G / max(H + reg_lambda, HESS_FLOOR))
    nl = np.arange(1, n)[None, :]
    valid = (xs[:, 1:] > xs[:, :-1]) & (nl >= min_leaf) & (n - nl >= min_leaf)
    gain = np.where(valid, gain, -np.inf)
    best_f, best_p, best_gain = -1, -1, MIN_GAIN
    for f in range(F):
        p = int(np.argmax(gain[f]))
        gv = gain[f, p]
        if gv > best_gain:
            best_f, best_p, best_gain = f, p, gv
    if best_f < 0:
        return -1, 0.0, 0.0
    lo, hi = xs[best_f, best_p], xs[best_f, best_p + 1]
    thr = 0.5 * (lo + hi)
    if not thr < hi:
        thr = lo
    return best_f, float(thr), float(best_gain)
