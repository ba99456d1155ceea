"""Pure-Python versions of the compiled kernels (same contracts)."""

import numpy as np


def hinge_sgd_epoch(X, pairs, order, w, lr, reg):
    shrink = 1.0 - lr * reg
    violations = 0
    for p in order:
        d = X[pairs[p, 0]] - X[pairs[p, 1]]
        if float(w @ d) < 1.0:
            violations += 1
            w *= shrink
            w += lr * d
        else:
            w *= shrink
    return violations


def graded_metrics(labels, offsets, k, max_label):
    n_queries = len(offsets) - 1
    ndcg = np.empty(n_queries)
    err = np.empty(n_queries)
    denom = 2.0**max_label
    for q in range(n_queries):
        ys = labels[offsets[q]:offsets[q + 1]]
        depth = min(k, len(ys))
        gains = np.exp2(ys.astype(np.float64)) - 1.0
        discounts = 1.0 / np.log2(np.arange(2, depth + 2))
        dcg = float(gains[:depth] @ discounts)
        idcg = float(np.sort(gains)[::-1][:depth] @ discounts)
        ndcg[q] = dcg / idcg if idcg > 0.0 else 1.0

        stop = gains[:depth] / denom
        reach = np.concatenate(([1.0], np.cumprod(1.0 - stop)[:-1]))
        err[q] = float(np.sum(reach * stop / np.arange(1, depth + 1)))
    return ndcg, err
