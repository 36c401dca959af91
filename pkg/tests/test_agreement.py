import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from usejudge.agreement import (
    PairedLabels,
    align,
    classification_metrics,
    cohen_kappa,
    correlation_metrics,
    mae,
    metric_report,
    weighted_classification_metrics,
)
from usejudge.core import LabelSource, UsefulnessLabel, make_scale
from usejudge.errors import NoOverlap, OutOfRange, Undefined

import oracles


def P(g, p):
    return PairedLabels.from_arrays(g, p)


def _labels(pairs, source=LabelSource.USER_USEFULNESS):
    s = make_scale(4)
    return [UsefulnessLabel("q", d, source, v, s) for d, v in pairs]


def test_align_identical_keys():
    a = _labels([(str(i), 1) for i in range(5)])
    p = align(a, a)
    assert len(p) == 5 and p.unmatched_gold == 0 and p.unmatched_pred == 0


def test_align_disjoint():
    with pytest.raises(NoOverlap):
        align(_labels([("a", 1)]), _labels([("b", 1)]))
    with pytest.raises(NoOverlap):
        align([], _labels([("b", 1)]))


def test_align_partial():
    g = _labels([(str(i), 2) for i in range(10)])
    p = _labels([(str(i), 2) for i in range(7)])
    r = align(g, p)
    assert (len(r), r.unmatched_gold, r.unmatched_pred) == (7, 3, 0)


def test_perfect_and_disjoint_classes():
    assert classification_metrics(P([1, 2, 3], [1, 2, 3]), 3) == (1.0, 1.0, 1.0)
    assert classification_metrics(P([1, 1, 1], [2, 2, 2]), 4) == (0.0, 0.0, 0.0)


def test_hand_confusion_binary():
    assert classification_metrics(P([1, 1, 2, 2], [1, 2, 1, 2]), 2) == (0.5, 0.5, 0.5)
    assert cohen_kappa(P([1, 1, 2, 2], [1, 2, 1, 2]), 2) == 0.0


def test_correlations():
    r, rho = correlation_metrics(P([1, 2, 3, 4], [1, 2, 3, 4]))
    assert r == 1.0 and rho == 1.0
    assert correlation_metrics(P([1, 2, 3, 4], [4, 3, 2, 1]))[1] == -1.0
    assert correlation_metrics(P([1, 2, 3, 4], [1, 3, 2, 4]))[1] == pytest.approx(0.8, abs=1e-15)


def test_correlation_undefined_for_constant():
    with pytest.raises(Undefined):
        correlation_metrics(P([2, 2, 2], [1, 2, 3]))


def test_kappa_perfect_and_undefined():
    assert cohen_kappa(P([1, 2, 1], [1, 2, 1]), 4) == 1.0
    with pytest.raises(Undefined):
        cohen_kappa(P([3, 3], [3, 3]), 4)


def test_mae_examples():
    assert mae(P([1, 2], [1, 2])) == 0.0
    assert mae(P([1, 4], [4, 1])) == 3.0
    assert mae(P([1, 2, 3], [2, 2, 2])) == pytest.approx(2 / 3, abs=1e-15)


def test_out_of_range_labels():
    with pytest.raises(OutOfRange):
        classification_metrics(P([1, 5], [1, 2]), 4)


def test_report_nulls_for_degenerate():
    rep = metric_report(P([2, 2, 2], [2, 2, 2]), 4).to_obj()
    assert rep["pearson_r"] is None and rep["spearman_rho"] is None and rep["cohen_kappa"] is None
    assert rep["f1"] == 0.25 and rep["mae"] == 0.0


def test_weighted_metrics_against_support():
    g, p = [1, 1, 1, 2], [1, 1, 2, 2]
    wp, wr, wf = weighted_classification_metrics(P(g, p), 2)
    assert wr == pytest.approx(0.75 * (2 / 3) + 0.25 * 1.0)


@given(st.sampled_from([2, 4, 5]), st.data())
def test_metrics_match_brute_force(n, data):
    m = data.draw(st.integers(2, 40))
    g = data.draw(st.lists(st.integers(1, n), min_size=m, max_size=m))
    p = data.draw(st.lists(st.integers(1, n), min_size=m, max_size=m))
    pl = P(g, p)
    assert classification_metrics(pl, n) == pytest.approx(oracles.macro_prf(g, p, n), abs=1e-12)
    assert mae(pl) == pytest.approx(oracles.mae(g, p), abs=1e-12)
    ref = oracles.pearson(g, p)
    if ref is None:
        with pytest.raises(Undefined):
            correlation_metrics(pl)
    else:
        r, rho = correlation_metrics(pl)
        assert r == pytest.approx(ref, abs=1e-9)
        assert rho == pytest.approx(oracles.spearman(g, p), abs=1e-9)
        assert rho == pytest.approx(stats.spearmanr(g, p).statistic, abs=1e-9)
    k = oracles.kappa(g, p, n)
    if k is None:
        with pytest.raises(Undefined):
            cohen_kappa(pl, n)
    else:
        assert cohen_kappa(pl, n) == pytest.approx(k, abs=1e-9)


@given(st.lists(st.integers(1, 5), min_size=2, max_size=30))
def test_self_agreement_maximal(g):
    pl = P(g, g)
    prec, rec, f1 = classification_metrics(pl, 5)
    used = len(set(g))
    assert f1 == pytest.approx(used / 5)
    assert mae(pl) == 0.0
    if used > 1:
        assert cohen_kappa(pl, 5) == pytest.approx(1.0)
        assert correlation_metrics(pl) == pytest.approx((1.0, 1.0))


def test_average_ranks_with_ties():
    from usejudge import _kernels

    x = np.array([3.0, 1.0, 3.0, 2.0, 3.0])
    for impl in ("numpy", "numba"):
        assert list(_kernels.get(impl).average_ranks(x)) == oracles.avg_ranks(list(x))
