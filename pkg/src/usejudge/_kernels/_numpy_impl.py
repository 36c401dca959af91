"""Pure-numpy kernels. Reference path; always importable."""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def confusion_matrix(gold: np.ndarray, pred: np.ndarray, n: int) -> np.ndarray:
    """Counts indexed ``[gold - 1, pred - 1]`` for labels in 1..n."""
    cm = np.zeros((n, n), dtype=np.int64)
    np.add.at(cm, (gold - 1, pred - 1), 1)
    return cm


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks, tied values sharing the mean of the ranks they span."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], xs.size]
    mean_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(x.size, dtype=np.float64)
    ranks[order] = np.repeat(mean_rank, ends - starts)
    return ranks


def click_metrics_batch(gains: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Rows of (cCG, cDCG, cMAX, cCG/#, cDCG/#) over the first ``counts[r]`` gains of each row."""
    rows, width = gains.shape
    pos = np.arange(width)
    mask = pos[None, :] < counts[:, None]
    g = np.where(mask, gains, 0.0)
    discount = 1.0 / np.log2(pos + 2.0)
    ccg = g.sum(axis=1)
    cdcg = (g * discount[None, :]).sum(axis=1)
    cmax = np.where(counts > 0, np.where(mask, gains, -np.inf).max(axis=1, initial=-np.inf), 0.0)
    safe = np.maximum(counts, 1)
    out = np.empty((rows, 5), dtype=np.float64)
    out[:, 0] = ccg
    out[:, 1] = cdcg
    out[:, 2] = cmax
    out[:, 3] = np.where(counts > 0, ccg / safe, 0.0)
    out[:, 4] = np.where(counts > 0, cdcg / safe, 0.0)
    return out


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_gd(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    X_hold: np.ndarray,
    y_hold: np.ndarray,
    lam: float,
    lr: float,
    max_iter: int,
    tol: float,
    patience: int,
):
    """Full-batch gradient descent for L2-penalised multinomial logistic regression.

    ``y`` holds class indices 0..n_classes-1. When a holdout is given, the
    iterate with the lowest holdout cross-entropy is returned.
    Returns ``(W, b, iterations)``.
    """
    n, d = X.shape
    W = np.zeros((d, n_classes))
    b = np.zeros(n_classes)
    best_W, best_b = W.copy(), b.copy()
    best_hold = np.inf
    since_best = 0
    prev = np.inf
    rows = np.arange(n)
    hold_rows = np.arange(X_hold.shape[0])
    it = 0
    for it in range(max_iter):
        logp = _log_softmax(X @ W + b)
        loss = -logp[rows, y].sum() / n + 0.5 * lam * (W * W).sum()
        if X_hold.shape[0] > 0:
            hl = -_log_softmax(X_hold @ W + b)[hold_rows, y_hold].sum() / X_hold.shape[0]
            if hl < best_hold:
                best_hold = hl
                best_W, best_b = W.copy(), b.copy()
                since_best = 0
            else:
                since_best += 1
        else:
            best_W, best_b = W.copy(), b.copy()
        if prev - loss < tol or since_best >= patience:
            break
        prev = loss
        G = np.exp(logp)
        G[rows, y] -= 1.0
        G /= n
        W = W - lr * (X.T @ G + lam * W)
        b = b - lr * G.sum(axis=0)
    return best_W, best_b, it + 1
