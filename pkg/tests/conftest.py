from datetime import datetime, timedelta, timezone

import pytest

from usejudge.core import ClickEvent, DocRecord, QueryRecord, SearchSession
from usejudge.ingest import build_instances
from usejudge.synth import generate_corpus

T0 = datetime(2024, 3, 1, 12, 0, 0, tzinfo=timezone.utc)


def make_query(qid="q1", n_results=10, click_ranks=(), dwells=None, session_end_last=False,
               satisfaction=None, sat_scale=None, text="cheap flights", contents=None, t0=T0):
    docs = tuple(
        DocRecord(f"{qid}-d{r}", r, f"https://x.test/{qid}/{r}", f"title {r}",
                  (contents or {}).get(r, f"content of result {r} for {qid}"))
        for r in range(1, n_results + 1)
    )
    dwells = list(dwells) if dwells is not None else [10.0] * len(click_ranks)
    clicks = []
    t = t0 + timedelta(seconds=5)
    for i, (r, dw) in enumerate(zip(click_ranks, dwells), start=1):
        end = session_end_last and i == len(click_ranks)
        clicks.append(ClickEvent(f"{qid}-d{r}", i, t, float(dw), end))
        t = t + timedelta(seconds=dw + 3)
    return QueryRecord(qid, text, t0, docs, tuple(clicks), satisfaction, sat_scale)


def make_session(queries, sid="s1", user="u1", background="Plan a trip.", goal="Find a cheap flight."):
    return SearchSession(sid, user, background, goal, tuple(queries))


def instances_for(click_ranks, qid="q1", contents=None):
    q = make_query(qid, click_ranks=click_ranks, contents=contents)
    s = make_session([q])
    return build_instances(q, s)


@pytest.fixture(scope="session")
def corpus200():
    return generate_corpus(seed=11, num_queries=200)


_acceptance_results: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.when != "call" and not rep.failed:
        return
    num, title = mark.args
    if rep.when == "call" or num not in _acceptance_results:
        _acceptance_results[num] = (title, "PASS" if rep.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_acceptance_results):
        title, status = _acceptance_results[num]
        terminalreporter.write_line(f"[{status}] criterion {num:2d}: {title}")
