"""Agreement between a predicted label set and a gold label set.

Classification scores are macro-averaged over all n classes, with 0 for any
class whose precision or recall denominator is empty. Kappa is unweighted.
Correlations that are undefined (a constant side) are reported as null.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Iterable, Mapping

import numpy as np

from . import _kernels
from .core import UsefulnessLabel
from .errors import NoOverlap, OutOfRange, Undefined

K = _kernels.active


@dataclass(frozen=True)
class PairedLabels:
    keys: tuple[tuple[str, str], ...]
    gold: np.ndarray
    pred: np.ndarray
    unmatched_gold: int = 0
    unmatched_pred: int = 0

    def __len__(self) -> int:
        return len(self.keys)

    @classmethod
    def from_arrays(cls, gold, pred) -> "PairedLabels":
        g = np.asarray(gold, dtype=np.int64)
        p = np.asarray(pred, dtype=np.int64)
        if g.shape != p.shape or g.ndim != 1 or g.size == 0:
            raise ValueError("paired vectors must be 1-d, non-empty and of equal length")
        return cls(tuple(("", str(i)) for i in range(g.size)), g, p)


def _as_map(labels: Mapping[tuple[str, str], int] | Iterable[UsefulnessLabel]) -> dict[tuple[str, str], int]:
    if isinstance(labels, Mapping):
        return dict(labels)
    out: dict[tuple[str, str], int] = {}
    for lab in labels:
        if lab.key in out:
            raise ValueError(f"two labels for {lab.key}; filter to one source first")
        out[lab.key] = lab.value
    return out


def align(gold, pred) -> PairedLabels:
    g, p = _as_map(gold), _as_map(pred)
    if not g or not p:
        raise NoOverlap("both label sets must be non-empty")
    keys = tuple(sorted(g.keys() & p.keys()))
    if not keys:
        raise NoOverlap("gold and predicted labels share no (query_id, doc_id) keys")
    return PairedLabels(
        keys,
        np.array([g[k] for k in keys], dtype=np.int64),
        np.array([p[k] for k in keys], dtype=np.int64),
        unmatched_gold=len(g) - len(keys),
        unmatched_pred=len(p) - len(keys),
    )


def confusion(p: PairedLabels, n: int) -> np.ndarray:
    """Counts indexed [gold - 1, pred - 1]."""
    for side in (p.gold, p.pred):
        if side.min() < 1 or side.max() > n:
            raise OutOfRange(f"labels must lie in 1..{n}")
    return K.confusion_matrix(p.gold, p.pred, n)


def _per_class(p: PairedLabels, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    cm = confusion(p, n)
    tp = np.diag(cm).astype(float)
    pred_tot = cm.sum(axis=0).astype(float)
    gold_tot = cm.sum(axis=1).astype(float)
    prec = np.divide(tp, pred_tot, out=np.zeros(n), where=pred_tot > 0)
    rec = np.divide(tp, gold_tot, out=np.zeros(n), where=gold_tot > 0)
    denom = prec + rec
    f1 = np.divide(2 * prec * rec, denom, out=np.zeros(n), where=denom > 0)
    return prec, rec, f1, gold_tot


def classification_metrics(p: PairedLabels, n: int) -> tuple[float, float, float]:
    prec, rec, f1, _ = _per_class(p, n)
    return float(prec.mean()), float(rec.mean()), float(f1.mean())


def weighted_classification_metrics(p: PairedLabels, n: int) -> tuple[float, float, float]:
    prec, rec, f1, support = _per_class(p, n)
    w = support / support.sum()
    return float(prec @ w), float(rec @ w), float(f1 @ w)


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    saa, sbb = float(a @ a), float(b @ b)
    if saa == 0.0 or sbb == 0.0:
        raise Undefined("correlation undefined for a constant vector")
    # one sqrt of the product keeps r exactly 1 for identical inputs
    return max(-1.0, min(1.0, float(a @ b) / math.sqrt(saa * sbb)))


def correlation_metrics(p: PairedLabels) -> tuple[float, float]:
    if len(p) < 2:
        raise Undefined("correlation needs at least two pairs")
    g = p.gold.astype(float)
    q = p.pred.astype(float)
    return _pearson(g, q), _pearson(K.average_ranks(g), K.average_ranks(q))


def cohen_kappa(p: PairedLabels, n: int) -> float:
    cm = confusion(p, n).astype(float)
    total = cm.sum()
    p_o = np.trace(cm) / total
    p_e = float((cm.sum(axis=1) / total) @ (cm.sum(axis=0) / total))
    if math.isclose(p_e, 1.0, rel_tol=0.0, abs_tol=1e-15):
        raise Undefined("kappa undefined when chance agreement is 1")
    return float((p_o - p_e) / (1.0 - p_e))


def mae(p: PairedLabels) -> float:
    return float(np.abs(p.gold - p.pred).mean())


@dataclass(frozen=True)
class MetricReport:
    precision: float
    recall: float
    f1: float
    pearson_r: float | None
    spearman_rho: float | None
    cohen_kappa: float | None
    mae: float
    n_pairs: int
    unmatched_gold: int
    unmatched_pred: int
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float

    def to_obj(self) -> dict[str, Any]:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "pearson_r": self.pearson_r,
            "spearman_rho": self.spearman_rho,
            "cohen_kappa": self.cohen_kappa,
            "mae": self.mae,
            "n_pairs": self.n_pairs,
            "unmatched_gold": self.unmatched_gold,
            "unmatched_pred": self.unmatched_pred,
            "weighted": {
                "precision": self.weighted_precision,
                "recall": self.weighted_recall,
                "f1": self.weighted_f1,
            },
        }


def metric_report(p: PairedLabels, n: int) -> MetricReport:
    prec, rec, f1 = classification_metrics(p, n)
    wp, wr, wf = weighted_classification_metrics(p, n)
    try:
        r, rho = correlation_metrics(p)
    except Undefined:
        r = rho = None
    try:
        kappa: float | None = cohen_kappa(p, n)
    except Undefined:
        kappa = None
    return MetricReport(prec, rec, f1, r, rho, kappa, mae(p), len(p),
                        p.unmatched_gold, p.unmatched_pred, wp, wr, wf)
