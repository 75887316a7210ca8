# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled regression-tree kernels; see ``_pytree`` for the reference semantics."""

import numpy as np

from libc.math cimport INFINITY, fabs
from libc.stdlib cimport free, malloc


cdef double TIE_TOL = 1e-12


cdef void _merge_sort(double* keys, double* vals, double* kbuf, double* vbuf, Py_ssize_t n) noexcept nogil:
    # Bottom-up, stable: equal keys keep their input order like numpy's kind="stable".
    cdef Py_ssize_t width = 1, lo, mid, hi, i, j, k
    cdef double* src_k = keys
    cdef double* src_v = vals
    cdef double* dst_k = kbuf
    cdef double* dst_v = vbuf
    cdef double* tmp
    while width < n:
        lo = 0
        while lo < n:
            mid = lo + width
            if mid > n:
                mid = n
            hi = lo + 2 * width
            if hi > n:
                hi = n
            i = lo
            j = mid
            k = lo
            while i < mid and j < hi:
                if src_k[j] < src_k[i]:
                    dst_k[k] = src_k[j]
                    dst_v[k] = src_v[j]
                    j += 1
                else:
                    dst_k[k] = src_k[i]
                    dst_v[k] = src_v[i]
                    i += 1
                k += 1
            while i < mid:
                dst_k[k] = src_k[i]
                dst_v[k] = src_v[i]
                i += 1
                k += 1
            while j < hi:
                dst_k[k] = src_k[j]
                dst_v[k] = src_v[j]
                j += 1
                k += 1
            lo += 2 * width
        tmp = src_k
        src_k = dst_k
        dst_k = tmp
        tmp = src_v
        src_v = dst_v
        dst_v = tmp
        width *= 2
    if src_k != keys:
        for i in range(n):
            keys[i] = src_k[i]
            vals[i] = src_v[i]


def best_split(const double[:, ::1] X, const double[::1] y, const long long[::1] idx,
               const long long[::1] features, Py_ssize_t min_leaf):
    cdef Py_ssize_t n = idx.shape[0]
    cdef Py_ssize_t n_feat = features.shape[0]
    cdef Py_ssize_t fi, i, f, pick
    cdef long long best_f = -1
    cdef double best_thr = 0.0, best_score = -INFINITY
    cdef double csum, total, s_left, s_right, n_left, n_right, score, thr, top
    cdef double* keys
    cdef double* vals
    cdef double* kbuf
    cdef double* vbuf
    cdef double* prefix
    cdef double* scores

    if n < 2 * min_leaf or n < 2:
        return int(best_f), best_thr, best_score

    keys = <double*> malloc(n * sizeof(double))
    vals = <double*> malloc(n * sizeof(double))
    kbuf = <double*> malloc(n * sizeof(double))
    vbuf = <double*> malloc(n * sizeof(double))
    prefix = <double*> malloc(n * sizeof(double))
    scores = <double*> malloc(n * sizeof(double))
    if keys == NULL or vals == NULL or kbuf == NULL or vbuf == NULL or prefix == NULL or scores == NULL:
        free(keys); free(vals); free(kbuf); free(vbuf); free(prefix); free(scores)
        raise MemoryError()
    try:
        with nogil:
            for fi in range(n_feat):
                f = features[fi]
                for i in range(n):
                    keys[i] = X[idx[i], f]
                    vals[i] = y[idx[i]]
                _merge_sort(keys, vals, kbuf, vbuf, n)
                csum = 0.0
                for i in range(n):
                    csum = csum + vals[i]
                    prefix[i] = csum
                total = prefix[n - 1]
                top = -INFINITY
                for i in range(n - 1):
                    scores[i] = -INFINITY
                    n_left = <double> (i + 1)
                    n_right = n - n_left
                    if n_left < min_leaf or n_right < min_leaf:
                        continue
                    if not keys[i] < keys[i + 1]:
                        continue
                    s_left = prefix[i]
                    s_right = total - s_left
                    score = s_left * s_left / n_left + s_right * s_right / n_right
                    scores[i] = score
                    if score > top:
                        top = score
                if top == -INFINITY:
                    continue
                if top > best_score + TIE_TOL * fabs(best_score) or best_f < 0:
                    pick = 0
                    while not scores[pick] >= top - TIE_TOL * fabs(top):
                        pick += 1
                    best_score = top
                    best_f = f
                    thr = 0.5 * (keys[pick] + keys[pick + 1])
                    if not (keys[pick] <= thr and thr < keys[pick + 1]):
                        thr = keys[pick]
                    best_thr = thr
    finally:
        free(keys); free(vals); free(kbuf); free(vbuf); free(prefix); free(scores)
    return int(best_f), best_thr, best_score


def predict_forest(const double[:, ::1] X, const long long[::1] feature, const double[::1] threshold,
                   const long long[::1] left, const long long[::1] right, const double[::1] value,
                   const long long[::1] roots):
    cdef Py_ssize_t m = X.shape[0]
    cdef Py_ssize_t n_trees = roots.shape[0]
    cdef Py_ssize_t r, t
    cdef long long node
    cdef double acc, leaf, lo, hi, mean
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] out_v = out
    with nogil:
        for r in range(m):
            acc = 0.0
            lo = INFINITY
            hi = -INFINITY
            for t in range(n_trees):
                node = roots[t]
                while feature[node] >= 0:
                    if X[r, feature[node]] <= threshold[node]:
                        node = left[node]
                    else:
                        node = right[node]
                leaf = value[node]
                acc = acc + leaf
                if leaf < lo:
                    lo = leaf
                if leaf > hi:
                    hi = leaf
            mean = acc / n_trees
            if mean < lo:
                mean = lo
            if mean > hi:
                mean = hi
            out_v[r] = mean
    return out
