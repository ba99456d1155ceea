# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled loops for the pairwise ranker and the graded ranking metrics."""

import numpy as np

cimport numpy as cnp
from libc.math cimport ldexp, log2

cnp.import_array()


def hinge_sgd_epoch(double[:, ::1] X, long long[:, ::1] pairs, long long[::1] order,
                    double[::1] w, double lr, double reg):
    """One pass of pairwise hinge-loss SGD over ``pairs`` visited in ``order``.

    ``w`` is updated in place. Returns the number of margin violations.
    """
    cdef Py_ssize_t n_feat = X.shape[1]
    cdef Py_ssize_t t, j, a, b
    cdef double margin, shrink = 1.0 - lr * reg
    cdef long long p, violations = 0
    for t in range(order.shape[0]):
        p = order[t]
        a = pairs[p, 0]
        b = pairs[p, 1]
        margin = 0.0
        for j in range(n_feat):
            margin += w[j] * (X[a, j] - X[b, j])
        if margin < 1.0:
            violations += 1
            for j in range(n_feat):
                w[j] = shrink * w[j] + lr * (X[a, j] - X[b, j])
        else:
            for j in range(n_feat):
                w[j] = shrink * w[j]
    return violations


def graded_metrics(long long[::1] labels, long long[::1] offsets, Py_ssize_t k,
                   long long max_label):
    """nDCG@k and ERR@k for every query of a ragged batch of displayed labels."""
    cdef Py_ssize_t n_queries = offsets.shape[0] - 1
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ndcg = np.empty(n_queries)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] err = np.empty(n_queries)
    cdef long long[::1] counts = np.zeros(max_label + 1, dtype=np.int64)
    cdef Py_ssize_t q, i, start, stop, depth, pos
    cdef long long y, g
    cdef double dcg, idcg, gain, stop_prob, reach, e, denom = ldexp(1.0, <int>max_label)
    for q in range(n_queries):
        start = offsets[q]
        stop = offsets[q + 1]
        depth = min(k, stop - start)
        dcg = 0.0
        e = 0.0
        reach = 1.0
        for i in range(depth):
            y = labels[start + i]
            gain = ldexp(1.0, <int>y) - 1.0
            dcg += gain / log2(i + 2.0)
            stop_prob = gain / denom
            e += reach * stop_prob / (i + 1.0)
            reach *= 1.0 - stop_prob
        for g in range(max_label + 1):
            counts[g] = 0
        for i in range(start, stop):
            counts[labels[i]] += 1
        idcg = 0.0
        pos = 0
        g = max_label
        while g >= 0 and pos < depth:
            if counts[g] > 0:
                idcg += (ldexp(1.0, <int>g) - 1.0) / log2(pos + 2.0)
                counts[g] -= 1
                pos += 1
            else:
                g -= 1
        ndcg[q] = dcg / idcg if idcg > 0.0 else 1.0
        err[q] = e
    return ndcg, err
