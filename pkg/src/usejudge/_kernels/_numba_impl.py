"""numba-compiled twins of the numpy kernels; same signatures and semantics."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True)
def confusion_matrix(gold, pred, n):
    cm = np.zeros((n, n), dtype=np.int64)
    for i in range(gold.shape[0]):
        cm[gold[i] - 1, pred[i] - 1] += 1
    return cm


@njit(cache=True)
def _average_ranks(x):
    m = x.shape[0]
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(m, dtype=np.float64)
    i = 0
    while i < m:
        j = i
        while j + 1 < m and x[order[j + 1]] == x[order[i]]:
            j += 1
        r = (i + j + 2) / 2.0
        for t in range(i, j + 1):
            ranks[order[t]] = r
        i = j + 1
    return ranks


def average_ranks(x):
    return _average_ranks(np.ascontiguousarray(x, dtype=np.float64))


@njit(cache=True)
def click_metrics_batch(gains, counts):
    rows = gains.shape[0]
    out = np.zeros((rows, 5), dtype=np.float64)
    for r in range(rows):
        c = counts[r]
        if c <= 0:
            continue
        ccg = 0.0
        cdcg = 0.0
        cmax = -np.inf
        for i in range(c):
            g = gains[r, i]
            ccg += g
            cdcg += g / math.log2(i + 2.0)
            if g > cmax:
                cmax = g
        out[r, 0] = ccg
        out[r, 1] = cdcg
        out[r, 2] = cmax
        out[r, 3] = ccg / c
        out[r, 4] = cdcg / c
    return out


@njit(cache=True)
def _log_softmax_rows(Z):
    out = np.empty_like(Z)
    for i in range(Z.shape[0]):
        mx = Z[i, 0]
        for k in range(1, Z.shape[1]):
            if Z[i, k] > mx:
                mx = Z[i, k]
        s = 0.0
        for k in range(Z.shape[1]):
            s += math.exp(Z[i, k] - mx)
        ls = math.log(s)
        for k in range(Z.shape[1]):
            out[i, k] = Z[i, k] - mx - ls
    return out


@njit(cache=True)
def _mean_nll(logp, y):
    s = 0.0
    for i in range(y.shape[0]):
        s -= logp[i, y[i]]
    return s / y.shape[0]


@njit(cache=True)
def softmax_gd(X, y, n_classes, X_hold, y_hold, lam, lr, max_iter, tol, patience):
    n, d = X.shape
    W = np.zeros((d, n_classes))
    b = np.zeros(n_classes)
    best_W = W.copy()
    best_b = b.copy()
    best_hold = np.inf
    since_best = 0
    prev = np.inf
    has_hold = X_hold.shape[0] > 0
    it = 0
    for it in range(max_iter):
        logp = _log_softmax_rows(X @ W + b)
        loss = _mean_nll(logp, y) + 0.5 * lam * np.sum(W * W)
        if has_hold:
            hl = _mean_nll(_log_softmax_rows(X_hold @ W + b), y_hold)
            if hl < best_hold:
                best_hold = hl
                best_W = W.copy()
                best_b = b.copy()
                since_best = 0
            else:
                since_best += 1
        else:
            best_W = W.copy()
            best_b = b.copy()
        if prev - loss < tol or since_best >= patience:
            break
        prev = loss
        G = np.exp(logp)
        for i in range(n):
            G[i, y[i]] -= 1.0
        G /= n
        W = W - lr * (X.T @ G + lam * W)
        b = b - lr * G.sum(axis=0)
    return best_W, best_b, it + 1
