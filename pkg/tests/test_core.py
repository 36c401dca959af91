import pytest

from usejudge.core import (
    LabelSource,
    UsefulnessLabel,
    clicked_documents,
    index_labels,
    make_scale,
    sort_labels,
)
from usejudge.errors import ArityMismatch, DanglingClick, DuplicateLabel, OutOfRange, SchemaError

from conftest import make_query, make_session


def test_default_scale_has_four_named_levels():
    s = make_scale(4)
    assert s.level_names == ("C1", "C2", "C3", "C4")
    assert list(s.levels) == [1, 2, 3, 4]


def test_binary_scale_with_names():
    s = make_scale(2, ["not useful", "useful"])
    assert s.name(2) == "useful"


@pytest.mark.parametrize("n", [1, 0, 11])
def test_scale_size_bounds(n):
    with pytest.raises(OutOfRange):
        make_scale(n)


def test_scale_name_arity():
    with pytest.raises(ArityMismatch):
        make_scale(3, ["a", "b"])


def test_clicked_documents_follow_click_order():
    q = make_query(click_ranks=(3, 7))
    pairs = clicked_documents(q)
    assert [(d.rank, c.click_order) for d, c in pairs] == [(3, 1), (7, 2)]


def test_clicked_documents_empty():
    assert clicked_documents(make_query(click_ranks=())) == []


def test_dangling_click():
    q = make_query(click_ranks=(2,))
    bad = q.clicks[0].__class__("nope", 1, q.clicks[0].click_time, 1.0)
    q = q.__class__(q.query_id, q.query_string_text, q.issue_time, q.results, (bad,))
    with pytest.raises(DanglingClick):
        clicked_documents(q)
    with pytest.raises(DanglingClick):
        q.validate()


def test_label_value_checked_against_scale():
    with pytest.raises(OutOfRange):
        UsefulnessLabel("q", "d", LabelSource.USER_USEFULNESS, 5, make_scale(4))


def test_label_source_parse_aliases():
    assert LabelSource.parse("u_llm") is LabelSource.LLM_USEFULNESS
    assert LabelSource.parse("third_party_relevance") is LabelSource.THIRD_PARTY_RELEVANCE
    assert LabelSource.parse("USER_USEFULNESS") is LabelSource.USER_USEFULNESS
    with pytest.raises(SchemaError):
        LabelSource.parse("bogus")


def test_index_labels_rejects_duplicates():
    s = make_scale(4)
    a = UsefulnessLabel("q", "d", LabelSource.USER_USEFULNESS, 2, s)
    with pytest.raises(DuplicateLabel):
        index_labels([a, a])
    b = UsefulnessLabel("q", "d", LabelSource.LLM_USEFULNESS, 3, s)
    assert index_labels([a, b], LabelSource.LLM_USEFULNESS)[("q", "d")].value == 3


def test_sort_labels_by_key():
    s = make_scale(4)
    labs = [UsefulnessLabel(q, d, LabelSource.USER_USEFULNESS, 1, s) for q, d in [("b", "1"), ("a", "2"), ("a", "1")]]
    assert [l.key for l in sort_labels(labs)] == [("a", "1"), ("a", "2"), ("b", "1")]


def test_session_validation_catches_gapped_click_order():
    q = make_query(click_ranks=(1, 2))
    c1, c2 = q.clicks
    c2 = c2.__class__(c2.doc_id, 3, c2.click_time, c2.dwell_time_seconds)
    q = q.__class__(q.query_id, q.query_string_text, q.issue_time, q.results, (c1, c2))
    with pytest.raises(SchemaError):
        make_session([q]).validate()


def test_task_description_joins_parts():
    assert make_session([], background="A.", goal="B.").task_description_text == "A. B."
    assert make_session([], background="", goal="B.").task_description_text == "B."
