import numpy as np

from usejudge.ingest import corpus_stats, dumps_labels, dumps_sessions, parse_sessions
from usejudge.satisfaction import click_sequence
from usejudge.synth import bucketize, generate_corpus

import oracles


def test_same_seed_same_bytes():
    a = generate_corpus(seed=7, num_queries=200)
    b = generate_corpus(seed=7, num_queries=200)
    assert dumps_sessions(a.sessions) == dumps_sessions(b.sessions)
    assert dumps_labels(a.gold) == dumps_labels(b.gold)
    assert dumps_sessions(generate_corpus(seed=8, num_queries=200).sessions) != dumps_sessions(a.sessions)


def test_sessions_parse_back():
    c = generate_corpus(seed=1, num_queries=40)
    assert parse_sessions(dumps_sessions(c.sessions)) == c.sessions


def test_clicks_per_query_target():
    stats = corpus_stats(generate_corpus(seed=2, num_queries=3000).sessions)
    assert stats.num_queries == 3000
    assert abs(stats.clicks_per_query - 1.6) < 0.05


def test_noise_free_satisfaction_is_bucketized_cdcg():
    c = generate_corpus(seed=3, num_queries=300, noise=0.0)
    gold = c.usefulness_map()
    for q in c.queries:
        vals = [gold[(q.query_id, d)] for d in click_sequence(q)]
        cdcg = oracles.click_metrics(vals)[1]
        assert q.satisfaction == int(bucketize(np.array([cdcg]), c.thresholds)[0])


def test_every_query_clicked_and_labeled(corpus200):
    gold = corpus200.usefulness_map()
    rel = corpus200.relevance_map()
    for s in corpus200.sessions:
        s.validate()
        ends = [c.is_session_end for q in s.queries for c in q.clicks]
        assert ends[-1] and sum(ends) == 1
        for q in s.queries:
            assert len(q.results) == 10 and q.clicks
            assert all((q.query_id, c.doc_id) in gold for c in q.clicks)
            assert all((q.query_id, d.doc_id) in rel for d in q.results)


def test_bucketize_edges():
    th = np.array([1.0, 2.0])
    assert list(bucketize(np.array([0.5, 1.0, 1.5, 2.0, 9.0]), th)) == [1, 1, 2, 2, 3]
