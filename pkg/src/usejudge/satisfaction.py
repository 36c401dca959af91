"""Query-level satisfaction prediction from behavior features and label-derived
click-sequence metrics.

Click metrics use gain ``g = value - 1`` (or ``2**(value - 1) - 1`` with
``gain="exp"``) over the first k items of a sequence, discounted by
``1 / log2(i + 1)`` at 1-based position i:

* cCG  = sum of gains
* cDCG = sum of discounted gains
* cMAX = largest gain
* cCG/#, cDCG/# = the above divided by the number of counted items

Usefulness labels are read along the click sequence; relevance labels along the
ranked result list, since they exist for unclicked results too.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Iterable, Mapping, Protocol, Sequence

import numpy as np
from scipy import stats

from . import _kernels
from .core import LabelSource, QueryRecord, UsefulnessLabel, clicked_documents
from .errors import (
    DegenerateTarget,
    InsufficientRows,
    MissingLabel,
    RowMismatch,
    ZeroVariance,
)
from .ingest import BEHAVIOR_FEATURES, BehaviorVector

K = _kernels.active

METRIC_NAMES = ("ccg", "cdcg", "cmax", "ccg_per_click", "cdcg_per_click")
MIN_CV_ROWS = 50


def sub_seed(seed: int, label: str) -> int:
    """Independent child seed for one named use of the top-level seed."""
    digest = hashlib.sha256(f"{seed}/{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


# --------------------------------------------------------------------------- click metrics


@dataclass(frozen=True)
class SessionMetricVector:
    cCG: float
    cDCG: float
    cMAX: float
    cCG_per_click: float
    cDCG_per_click: float
    cutoff_k: int | None = None

    def as_list(self) -> list[float]:
        return [self.cCG, self.cDCG, self.cMAX, self.cCG_per_click, self.cDCG_per_click]


def gains(values: Sequence[int], gain: str = "linear") -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if gain == "linear":
        return v - 1.0
    if gain == "exp":
        return np.exp2(v - 1.0) - 1.0
    raise ValueError(f"unknown gain {gain!r}")


def _label_values(labels: Mapping[str, int] | Iterable[UsefulnessLabel]) -> dict[str, int]:
    if isinstance(labels, Mapping):
        return dict(labels)
    return {lab.doc_id: lab.value for lab in labels}


def click_metrics(
    labels: Mapping[str, int] | Iterable[UsefulnessLabel],
    sequence: Sequence[str],
    cutoff_k: int | None = None,
    gain: str = "linear",
) -> SessionMetricVector:
    """Metrics over the first ``cutoff_k`` doc ids of ``sequence`` (all when None)."""
    values = _label_values(labels)
    counted = list(sequence if cutoff_k is None else sequence[:cutoff_k])
    missing = [d for d in counted if d not in values]
    if missing:
        raise MissingLabel(f"no label for {missing[0]!r}")
    width = max(len(counted), 1)
    row = np.zeros((1, width))
    row[0, : len(counted)] = gains([values[d] for d in counted], gain)
    out = K.click_metrics_batch(row, np.array([len(counted)], dtype=np.int64))[0]
    return SessionMetricVector(*(float(v) for v in out), cutoff_k=cutoff_k)


def click_sequence(query: QueryRecord) -> list[str]:
    return [d.doc_id for d, _ in clicked_documents(query)]


def rank_sequence(query: QueryRecord) -> list[str]:
    return [d.doc_id for d in sorted(query.results, key=lambda d: d.rank)]


# --------------------------------------------------------------------------- features


@dataclass(frozen=True)
class LabelFeatures:
    """One label source turned into click metrics at one or more cutoffs."""

    labels: Sequence[UsefulnessLabel]
    cutoffs: Sequence[int | None] = (None,)
    sequence: str = "auto"  # "clicks", "ranks", or "auto" (ranks for relevance sources)
    gain: str = "linear"
    name: str | None = None

    @property
    def source(self) -> LabelSource:
        srcs = {l.source for l in self.labels}
        if len(srcs) != 1:
            raise ValueError(f"label features need exactly one source, got {sorted(s.value for s in srcs)}")
        return next(iter(srcs))

    @property
    def prefix(self) -> str:
        return self.name or self.source.short

    def seq_mode(self) -> str:
        if self.sequence != "auto":
            return self.sequence
        relevance = (LabelSource.THIRD_PARTY_RELEVANCE, LabelSource.LLM_RELEVANCE)
        return "ranks" if self.source in relevance else "clicks"

    def columns(self) -> list[str]:
        return [f"{self.prefix}_{m}_at_{'all' if k is None else k}" for k in self.cutoffs for m in METRIC_NAMES]


@dataclass(frozen=True)
class FeatureMatrix:
    query_ids: tuple[str, ...]
    columns: tuple[str, ...]
    values: np.ndarray
    target: np.ndarray
    dropped: int = 0

    def __post_init__(self) -> None:
        if self.values.shape != (len(self.query_ids), len(self.columns)):
            raise ValueError("feature matrix is not rectangular")
        if self.target.shape != (len(self.query_ids),):
            raise ValueError("one target per row required")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature matrix contains NaN or infinity")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["query_id", *self.columns, "satisfaction"])
        for qid, row, t in zip(self.query_ids, self.values, self.target):
            w.writerow([qid, *(repr(float(v)) for v in row), int(t)])
        return buf.getvalue()


def assemble_features(
    queries: Iterable[QueryRecord],
    behavior: Mapping[str, BehaviorVector],
    label_features: LabelFeatures | Sequence[LabelFeatures] | None = None,
) -> FeatureMatrix:
    """Rows for queries with a satisfaction rating, sorted by query id."""
    if isinstance(label_features, LabelFeatures):
        label_features = [label_features]
    label_features = list(label_features or [])
    queries = list(queries)
    kept = sorted((q for q in queries if q.satisfaction is not None), key=lambda q: q.query_id)
    dropped = len(queries) - len(kept)

    by_query: list[dict[str, dict[str, int]]] = []
    for lf in label_features:
        per: dict[str, dict[str, int]] = {}
        for lab in lf.labels:
            per.setdefault(lab.query_id, {})[lab.doc_id] = lab.value
        by_query.append(per)

    columns = list(BEHAVIOR_FEATURES)
    for lf in label_features:
        columns += lf.columns()

    rows = []
    for q in kept:
        row = behavior[q.query_id].as_list()
        for lf, per in zip(label_features, by_query):
            seq = click_sequence(q) if lf.seq_mode() == "clicks" else rank_sequence(q)
            vals = per.get(q.query_id, {})
            for k in lf.cutoffs:
                try:
                    row += click_metrics(vals, seq, k, lf.gain).as_list()
                except MissingLabel as exc:
                    raise MissingLabel(f"query {q.query_id}: {exc}") from None
        rows.append(row)
    values = np.array(rows, dtype=np.float64).reshape(len(kept), len(columns))
    target = np.array([q.satisfaction for q in kept], dtype=np.int64)
    return FeatureMatrix(tuple(q.query_id for q in kept), tuple(columns), values, target, dropped)


# --------------------------------------------------------------------------- classifier


class Classifier(Protocol):
    def fit(self, X: np.ndarray, y: np.ndarray, n_classes: int, X_hold: np.ndarray, y_hold: np.ndarray) -> "Classifier": ...

    def predict(self, X: np.ndarray) -> np.ndarray: ...


@dataclass
class SoftmaxRegression:
    """Multinomial logistic regression trained by full-batch gradient descent.

    The holdout, when non-empty, picks the iterate with the lowest holdout loss;
    training stops once the training loss improves by less than ``tol`` or the
    holdout loss has not improved for ``patience`` iterations.
    """

    lam: float = 0.1
    lr: float = 0.1
    max_iter: int = 2000
    tol: float = 1e-7
    patience: int = 200
    kernels: Any = None
    W: np.ndarray | None = None
    b: np.ndarray | None = None
    iterations: int = 0

    def fit(self, X, y, n_classes, X_hold, y_hold):
        k = self.kernels or K
        self.W, self.b, self.iterations = k.softmax_gd(
            np.ascontiguousarray(X, dtype=np.float64),
            np.ascontiguousarray(y, dtype=np.int64),
            int(n_classes),
            np.ascontiguousarray(X_hold, dtype=np.float64),
            np.ascontiguousarray(y_hold, dtype=np.int64),
            float(self.lam),
            float(self.lr),
            int(self.max_iter),
            float(self.tol),
            int(self.patience),
        )
        return self

    def predict(self, X):
        return np.argmax(X @ self.W + self.b, axis=1)


# --------------------------------------------------------------------------- cross-validation


@dataclass(frozen=True)
class FoldScore:
    precision: float
    recall: float
    f1: float
    mae: float
    n_test: int
    iterations: int


@dataclass(frozen=True)
class CvReport:
    seed: int
    folds: tuple[FoldScore, ...]
    fold_of: tuple[int, ...] = field(repr=False, default=())

    @property
    def means(self) -> dict[str, float]:
        return {
            m: float(np.mean([getattr(f, m) for f in self.folds]))
            for m in ("precision", "recall", "f1", "mae")
        }

    def f1_scores(self) -> list[float]:
        return [f.f1 for f in self.folds]

    def to_obj(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "n_folds": len(self.folds),
            "means": self.means,
            "folds": [f.__dict__ for f in self.folds],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_obj(), sort_keys=True)


def _macro_prf(true_idx: np.ndarray, pred_idx: np.ndarray, n_classes: int) -> tuple[float, float, float]:
    cm = K.confusion_matrix(true_idx + 1, pred_idx + 1, n_classes)
    tp = np.diag(cm).astype(float)
    pt = cm.sum(axis=0).astype(float)
    gt = cm.sum(axis=1).astype(float)
    p = np.divide(tp, pt, out=np.zeros(n_classes), where=pt > 0)
    r = np.divide(tp, gt, out=np.zeros(n_classes), where=gt > 0)
    f = np.divide(2 * p * r, p + r, out=np.zeros(n_classes), where=(p + r) > 0)
    return float(p.mean()), float(r.mean()), float(f.mean())


def fold_assignment(query_ids: Sequence[str], folds: int, seed: int) -> np.ndarray:
    """Fold index per row, from a seeded shuffle of the query ids."""
    order = np.argsort(np.array(query_ids, dtype=object), kind="stable")
    rng = np.random.default_rng(sub_seed(seed, "folds"))
    shuffled = order[rng.permutation(len(order))]
    fold_of = np.empty(len(order), dtype=np.int64)
    for f, chunk in enumerate(np.array_split(shuffled, folds)):
        fold_of[chunk] = f
    return fold_of


def train_eval_cv(
    matrix: FeatureMatrix,
    folds: int = 5,
    seed: int = 0,
    classifier_factory=SoftmaxRegression,
    holdout_fraction: float = 0.2,
) -> CvReport:
    n = len(matrix.query_ids)
    if n < MIN_CV_ROWS:
        raise InsufficientRows(f"cross-validation needs at least {MIN_CV_ROWS} rows, got {n}")
    classes = np.unique(matrix.target)
    if classes.size < 2:
        raise DegenerateTarget(f"satisfaction has a single class ({classes.tolist()})")
    y_all = np.searchsorted(classes, matrix.target)
    fold_of = fold_assignment(matrix.query_ids, folds, seed)

    scores = []
    for f in range(folds):
        test = np.flatnonzero(fold_of == f)
        train = np.flatnonzero(fold_of != f)
        rng = np.random.default_rng(sub_seed(seed, f"holdout/{f}"))
        train = train[rng.permutation(train.size)]
        n_hold = int(round(holdout_fraction * train.size))
        fit_idx, hold_idx = np.sort(train[n_hold:]), np.sort(train[:n_hold])

        X_train = matrix.values[train]
        mu = X_train.mean(axis=0)
        sd = X_train.std(axis=0)
        sd[sd == 0] = 1.0

        def z(idx):
            return (matrix.values[idx] - mu) / sd

        model = classifier_factory().fit(z(fit_idx), y_all[fit_idx], classes.size, z(hold_idx), y_all[hold_idx])
        pred = model.predict(z(test))
        p, r, f1 = _macro_prf(y_all[test], pred, classes.size)
        err = float(np.abs(classes[pred] - matrix.target[test]).mean())
        scores.append(FoldScore(p, r, f1, err, int(test.size), int(getattr(model, "iterations", 0))))
    return CvReport(seed, tuple(scores), tuple(int(v) for v in fold_of))


# --------------------------------------------------------------------------- significance


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: int
    mean_diff: float


def paired_t_test(scores_a: Sequence[float], scores_b: Sequence[float]) -> TTestResult:
    """Two-tailed paired t-test on per-fold differences a - b."""
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("need two equal-length score vectors of length >= 2")
    d = a - b
    m = d.size
    sd = float(np.std(d, ddof=1))
    if sd == 0.0 or math.isclose(sd, 0.0, abs_tol=1e-15 * max(1.0, float(np.abs(d).max()))):
        raise ZeroVariance("all paired differences are equal")
    t = float(d.mean() / (sd / math.sqrt(m)))
    p = float(2.0 * stats.t.sf(abs(t), m - 1))
    return TTestResult(t, p, m - 1, float(d.mean()))


@dataclass
class ComparisonReport:
    seed: int
    folds: int
    variants: dict[str, CvReport]
    tests: list[dict[str, Any]]

    def to_obj(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "folds": self.folds,
            "variants": {k: v.to_obj() for k, v in self.variants.items()},
            "tests": self.tests,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_obj(), sort_keys=True, indent=2)


def compare_feature_sets(
    variants: Mapping[str, FeatureMatrix],
    seed: int = 0,
    folds: int = 5,
    classifier_factory=SoftmaxRegression,
) -> ComparisonReport:
    """Cross-validate every variant on the same folds; paired t-tests on per-fold macro F1."""
    names = list(variants)
    if not names:
        raise ValueError("no variants to compare")
    ref = variants[names[0]]
    for name in names[1:]:
        other = variants[name]
        if other.query_ids != ref.query_ids or not np.array_equal(other.target, ref.target):
            raise RowMismatch(f"variant {name!r} does not share rows with {names[0]!r}")
    reports = {name: train_eval_cv(variants[name], folds, seed, classifier_factory) for name in names}
    tests = []
    for a, b in combinations(names, 2):
        entry: dict[str, Any] = {"a": a, "b": b, "metric": "f1"}
        try:
            res = paired_t_test(reports[a].f1_scores(), reports[b].f1_scores())
            entry.update(t=res.t, p=res.p, df=res.df, mean_diff=res.mean_diff)
        except ZeroVariance:
            entry.update(t=None, p=None, df=folds - 1, mean_diff=float(
                np.mean(reports[a].f1_scores()) - np.mean(reports[b].f1_scores())),
                note="zero variance in paired differences")
        tests.append(entry)
    return ComparisonReport(seed, folds, reports, tests)
