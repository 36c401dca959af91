import json

import pytest

from usejudge.core import LabelSource, make_scale
from usejudge.errors import DanglingClick, OutOfRange, ParseError, SchemaError
from usejudge.ingest import (
    BEHAVIOR_FEATURES,
    IngestReport,
    corpus_stats,
    dumps_labels,
    dumps_sessions,
    extract_behavior_vector,
    extract_prompt_features,
    normalize_label_value,
    parse_labels,
    parse_sessions,
    session_to_obj,
)

from conftest import make_query, make_session


def _line(session):
    return json.dumps(session_to_obj(session))


def test_one_line_roundtrip():
    s = make_session([make_query(click_ranks=(3, 7), dwells=(30, 12))])
    parsed = parse_sessions(_line(s) + "\n")
    assert len(parsed) == 1 and len(parsed[0].queries) == 1
    assert parsed[0] == s
    assert dumps_sessions(parsed) == dumps_sessions([s])


def test_empty_input():
    assert parse_sessions("") == []


def test_missing_query_text_is_schema_error():
    obj = session_to_obj(make_session([make_query(click_ranks=(1,))]))
    del obj["queries"][0]["query_string_text"]
    with pytest.raises(SchemaError) as ei:
        parse_sessions(json.dumps(obj))
    assert "query_string_text" in str(ei.value)
    assert ei.value.line == 1


def test_malformed_json_reports_line():
    good = _line(make_session([make_query(click_ranks=(1,))]))
    with pytest.raises(ParseError) as ei:
        parse_sessions(good + "\n{oops\n")
    assert ei.value.line == 2


def test_dangling_click_rejected_at_ingest():
    obj = session_to_obj(make_session([make_query(click_ranks=(1,))]))
    obj["queries"][0]["clicks"][0]["doc_id"] = "ghost"
    with pytest.raises(DanglingClick):
        parse_sessions(json.dumps(obj))


def test_duplicate_clicks_first_kept_and_renumbered():
    obj = session_to_obj(make_session([make_query(click_ranks=(2, 5, 6))]))
    clicks = obj["queries"][0]["clicks"]
    clicks[2]["doc_id"] = clicks[0]["doc_id"]  # third click repeats the first doc
    clicks.append(dict(clicks[1], doc_id="q1-d9", click_order=4))
    report = IngestReport()
    [s] = parse_sessions(json.dumps(obj), report)
    q = s.queries[0]
    assert report.duplicate_clicks_dropped == 1
    assert [c.doc_id for c in q.clicks] == ["q1-d2", "q1-d5", "q1-d9"]
    assert [c.click_order for c in q.clicks] == [1, 2, 3]


def test_prompt_features_two_clicks():
    q = make_query(click_ranks=(3, 7), dwells=(30, 12))
    s = make_session([q])
    f = extract_prompt_features(q, q.clicks[0], s)
    assert f.query_total_click_number == 2
    assert f.query_clicked_ranks_list == (3, 7)
    assert f.query_max_clicked_rank == 7
    assert f.avg_doc_dwell_time_in_query == 21.0
    assert f.doc_click_order == 1
    assert f.doc_dwell_time == 30.0
    assert f.task_description_text == "Plan a trip. Find a cheap flight."


def test_prompt_features_single_click():
    q = make_query(click_ranks=(1,), dwells=(5,))
    f = extract_prompt_features(q, q.clicks[0], make_session([q]))
    assert (f.query_total_click_number, f.query_clicked_ranks_list, f.query_max_clicked_rank,
            f.avg_doc_dwell_time_in_query) == (1, (1,), 1, 5.0)


def test_session_end_copied():
    q = make_query(click_ranks=(1, 4), session_end_last=True)
    s = make_session([q])
    assert not extract_prompt_features(q, q.clicks[0], s).session_end
    assert extract_prompt_features(q, q.clicks[1], s).session_end


def test_behavior_zero_clicks():
    q = make_query(click_ranks=())
    v = extract_behavior_vector(q, make_session([q]))
    assert v["num_clicks"] == 0 and v["time_to_first_click_s"] == 0 and v["avg_click_dwell_s"] == 0
    assert v["num_queries_in_session"] == 1 and v["is_last_query_in_session"] == 1
    assert len(v.as_list()) == len(BEHAVIOR_FEATURES) == 10


def test_behavior_two_clicks():
    q = make_query(click_ranks=(3, 7), dwells=(30, 12))
    v = extract_behavior_vector(q, make_session([q]))
    assert v["avg_click_dwell_s"] == 21.0
    assert v["max_click_dwell_s"] == 30.0
    assert v["max_clicked_rank"] == 7
    assert v["time_to_first_click_s"] == 5.0
    assert v["query_length_chars"] == len("cheap flights")


def test_behavior_non_last_query_dwell_until_next_issue():
    from datetime import timedelta

    from conftest import T0

    q1 = make_query("q1", click_ranks=(1,))
    q2 = make_query("q2", click_ranks=(2,), t0=T0 + timedelta(seconds=100))
    s = make_session([q1, q2])
    v = extract_behavior_vector(q1, s)
    assert v["query_dwell_time_s"] == 100.0
    assert v["is_last_query_in_session"] == 0


def test_corpus_stats_lab_study_shape():
    # 935 queries with 1512 clicks: 577 queries clicked twice, 358 once
    queries = [make_query(f"q{i}", n_results=3, click_ranks=(1, 2) if i < 577 else (1,)) for i in range(935)]
    stats = corpus_stats([make_session(queries)])
    assert stats.num_queries == 935 and stats.num_clicked_docs == 1512
    assert round(stats.clicks_per_query, 1) == 1.6


def test_corpus_stats_empty_and_tiny():
    assert corpus_stats([]).to_dict() == dict(num_tasks=0, num_users=0, num_queries=0, num_docs=0,
                                              num_clicked_docs=0, clicks_per_query=0.0)
    assert corpus_stats([make_session([make_query(click_ranks=(1, 2))])]).clicks_per_query == 2.0


@pytest.mark.parametrize("raw,raw_min,expected", [(0, 0, 1), (4, 1, 4), (3, 0, 4), (1, 1, 1)])
def test_normalize_label_value(raw, raw_min, expected):
    assert normalize_label_value(raw, raw_min, make_scale(4)) == expected


def test_normalize_label_value_out_of_range():
    with pytest.raises(OutOfRange):
        normalize_label_value(5, 0, make_scale(4))


def test_labels_roundtrip_and_source_filter():
    text = (
        '{"query_id": "q", "doc_id": "a", "source": "r_a", "value": 0, "scale_n": 4}\n'
        '{"query_id": "q", "doc_id": "a", "source": "u_u", "value": 1, "scale_n": 4}\n'
    )
    rel = parse_labels(text, raw_min=0, source=LabelSource.THIRD_PARTY_RELEVANCE)
    assert [(l.doc_id, l.value) for l in rel] == [("a", 1)]
    both = parse_labels(dumps_labels(parse_labels(text, raw_min=0)))
    assert {l.source for l in both} == {LabelSource.THIRD_PARTY_RELEVANCE, LabelSource.USER_USEFULNESS}
