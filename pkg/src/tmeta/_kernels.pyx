# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Semantics mirror ``_kernels_py`` exactly."""
from libc.math cimport exp, log2, fabs, fmax, INFINITY

import numpy as np
cimport numpy as cnp

cnp.import_array()

DEF MIN_GAIN = 1e-12
DEF HESS_FLOOR = 1e-6


cdef inline int _sign(double x) nogil:
    return (x > 0) - (x < 0)


def tau_sums(const double[::1] s, const double[::1] t, const double[::1] a):
    cdef Py_ssize_t n = s.shape[0], i, j
    cdef double num = 0.0, den_s = 0.0, den_t = 0.0, w
    cdef int sg_s, sg_t
    with nogil:
        for i in range(n - 1):
            for j in range(i + 1, n):
                w = a[i] + a[j]
                sg_s = _sign(s[i] - s[j])
                sg_t = _sign(t[i] - t[j])
                num += w * sg_s * sg_t
                den_s += w * sg_s * sg_s
                den_t += w * sg_t * sg_t
    return num, den_s, den_t


def pair_gradients(const double[::1] pred, const double[::1] target, const long[::1] rel,
                   bint use_ndcg, double inv_idcg, double[::1] grad, double[::1] hess):
    cdef Py_ssize_t k = pred.shape[0], i, j
    cdef long[::1] order = np.argsort(-np.asarray(pred), kind="stable").astype(np.int64)
    cdef long[::1] pos = np.empty(k, dtype=np.int64)
    cdef double w, rho, lam, h, gain, disc
    for i in range(k):
        pos[order[i]] = i
    with nogil:
        for i in range(k):
            for j in range(k):
                if not target[i] > target[j]:
                    continue
                if use_ndcg:
                    gain = (2.0 ** rel[i]) - (2.0 ** rel[j])
                    disc = 1.0 / log2(pos[i] + 2.0) - 1.0 / log2(pos[j] + 2.0)
                    w = fabs(gain * disc) * inv_idcg
                else:
                    w = 1.0
                if w == 0.0:
                    continue
                rho = 1.0 / (1.0 + exp(pred[i] - pred[j]))
                lam = w * rho
                grad[i] -= lam
                grad[j] += lam
                h = w * rho * (1.0 - rho)
                hess[i] += h
                hess[j] += h


def best_split(const double[:, ::1] Xs, const long[:, ::1] presorted, const unsigned char[::1] in_node,
               const long[::1] idx, const double[::1] grad, const double[::1] hess,
               long min_leaf, double reg_lambda):
    cdef Py_ssize_t n = idx.shape[0], N = presorted.shape[1], F = presorted.shape[0]
    cdef Py_ssize_t f, r, s, nl, best_f = -1
    cdef double G = 0.0, H = 0.0, gl, hl, gr, hr, gain, best_gain = MIN_GAIN
    cdef double prev_x, x, best_lo = 0.0, best_hi = 0.0, root
    cdef bint started
    if n < 2 * min_leaf:
        return -1, 0.0, 0.0
    for r in range(n):
        G += grad[idx[r]]
        H += hess[idx[r]]
    with nogil:
        root = G * G / fmax(H + reg_lambda, HESS_FLOOR)
        for f in range(F):
            gl = 0.0
            hl = 0.0
            nl = 0
            started = False
            prev_x = 0.0
            for r in range(N):
                s = presorted[f, r]
                if not in_node[s]:
                    continue
                x = Xs[f, r]
                if started and nl < n and x > prev_x and nl >= min_leaf and n - nl >= min_leaf:
                    gr = G - gl
                    hr = H - hl
                    gain = (gl * gl / fmax(hl + reg_lambda, HESS_FLOOR)
                            + gr * gr / fmax(hr + reg_lambda, HESS_FLOOR)
                            - root)
                    if gain > best_gain:
                        best_gain = gain
                        best_f = f
                        best_lo = prev_x
                        best_hi = x
                gl += grad[s]
                hl += hess[s]
                nl += 1
                prev_x = x
                started = True
                if nl == n:
                    break
    if best_f < 0:
        return -1, 0.0, 0.0
    thr = 0.5 * (best_lo + best_hi)
    if not thr < best_hi:
        thr = best_lo
    return best_f, thr, best_gain
