"""Session-log ingestion: JSONL parsing/serialization, feature extraction, corpus statistics.

Session JSONL holds one session per line::

    {"session_id", "user_id", "task_background_text", "task_goal_text",
     "queries": [{"query_id", "query_string_text", "issue_time",
                  "satisfaction", "satisfaction_scale",
                  "results": [{"doc_id", "rank", "url", "title", "content_text"}],
                  "clicks": [{"doc_id", "click_order", "click_time",
                              "dwell_time_seconds", "is_session_end"}]}]}

Label JSONL holds one label per line: ``{"query_id", "doc_id", "source", "value", "scale_n"}``
with an optional ``"strategy"`` field on judged output.

``is_session_end`` marks the click that is the final logged action of its session.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta, timezone
from typing import IO, Any, Iterable, Iterator

from .core import (
    ClickEvent,
    DocRecord,
    JudgmentInstance,
    LabelSource,
    OrdinalScale,
    QueryRecord,
    SearchSession,
    UsefulnessLabel,
    clicked_documents,
    make_scale,
)
from .errors import DanglingClick, OutOfRange, ParseError, SchemaError

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------- types


@dataclass(frozen=True)
class FeatureBundle:
    """Content, context and behavior features describing one clicked document."""

    doc_content_text: str
    query_string_text: str
    task_description_text: str
    query_total_click_number: int
    query_clicked_ranks_list: tuple[int, ...]
    query_max_clicked_rank: int
    avg_doc_dwell_time_in_query: float
    doc_click_order: int
    doc_dwell_time: float
    session_end: bool


BEHAVIOR_FEATURES = (
    "session_duration_s",
    "num_queries_in_session",
    "query_length_chars",
    "query_dwell_time_s",
    "num_clicks",
    "time_to_first_click_s",
    "avg_click_dwell_s",
    "max_click_dwell_s",
    "max_clicked_rank",
    "is_last_query_in_session",
)


@dataclass(frozen=True)
class BehaviorVector:
    query_id: str
    values: dict[str, float]
    dwell_present: bool = True

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def as_list(self) -> list[float]:
        return [self.values[k] for k in BEHAVIOR_FEATURES]


@dataclass(frozen=True)
class CorpusStats:
    num_tasks: int = 0
    num_users: int = 0
    num_queries: int = 0
    num_docs: int = 0
    num_clicked_docs: int = 0
    clicks_per_query: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class IngestReport:
    lines: int = 0
    sessions: int = 0
    duplicate_clicks_dropped: int = 0
    warnings: list[str] = field(default_factory=list)


# --------------------------------------------------------------------------- parsing


def parse_time(text: str) -> datetime:
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt


def format_time(dt: datetime) -> str:
    return dt.isoformat()


def _get(obj: dict, key: str, kinds: tuple[type, ...], path: str, line: int, *, nullable=False):
    if not isinstance(obj, dict):
        raise SchemaError(path, "expected an object", line)
    if key not in obj:
        raise SchemaError(f"{path}.{key}", "missing field", line)
    val = obj[key]
    if val is None and nullable:
        return None
    if isinstance(val, bool) and bool not in kinds:
        raise SchemaError(f"{path}.{key}", f"expected {kinds[0].__name__}, got bool", line)
    if not isinstance(val, kinds):
        raise SchemaError(f"{path}.{key}", f"expected {kinds[0].__name__}, got {type(val).__name__}", line)
    return val


def _time(obj: dict, key: str, path: str, line: int) -> datetime:
    raw = _get(obj, key, (str,), path, line)
    try:
        return parse_time(raw)
    except ValueError as exc:
        raise SchemaError(f"{path}.{key}", f"not an RFC3339 timestamp: {raw!r}", line) from exc


def _parse_query(obj: dict, path: str, line: int, report: IngestReport) -> QueryRecord:
    qid = _get(obj, "query_id", (str,), path, line)
    text = _get(obj, "query_string_text", (str,), path, line)
    issued = _time(obj, "issue_time", path, line)
    sat = obj.get("satisfaction")
    sat_scale = obj.get("satisfaction_scale")
    for k, v in (("satisfaction", sat), ("satisfaction_scale", sat_scale)):
        if v is not None and (isinstance(v, bool) or not isinstance(v, int)):
            raise SchemaError(f"{path}.{k}", "expected int or null", line)

    results = []
    for i, r in enumerate(_get(obj, "results", (list,), path, line)):
        rp = f"{path}.results[{i}]"
        results.append(
            DocRecord(
                doc_id=_get(r, "doc_id", (str,), rp, line),
                rank=_get(r, "rank", (int,), rp, line),
                url=_get(r, "url", (str,), rp, line),
                title=_get(r, "title", (str,), rp, line),
                content_text=_get(r, "content_text", (str,), rp, line),
            )
        )

    raw_clicks = []
    for i, c in enumerate(_get(obj, "clicks", (list,), path, line)):
        cp = f"{path}.clicks[{i}]"
        dwell = _get(c, "dwell_time_seconds", (int, float), cp, line, nullable=True)
        if dwell is not None and (not math.isfinite(dwell) or dwell < 0):
            raise SchemaError(f"{cp}.dwell_time_seconds", "must be finite and non-negative", line)
        raw_clicks.append(
            ClickEvent(
                doc_id=_get(c, "doc_id", (str,), cp, line),
                click_order=_get(c, "click_order", (int,), cp, line),
                click_time=_time(c, "click_time", cp, line),
                dwell_time_seconds=float(dwell or 0.0),
                is_session_end=_get(c, "is_session_end", (bool,), cp, line),
                dwell_known=dwell is not None,
            )
        )

    # first click on a document wins; renumber to keep click_order contiguous
    kept: list[ClickEvent] = []
    seen: set[str] = set()
    for c in sorted(raw_clicks, key=lambda c: c.click_order):
        if c.doc_id in seen:
            report.duplicate_clicks_dropped += 1
            report.warnings.append(f"line {line}: dropped repeat click on {c.doc_id!r} in {qid}")
            continue
        seen.add(c.doc_id)
        kept.append(c)
    clicks = tuple(
        ClickEvent(c.doc_id, i, c.click_time, c.dwell_time_seconds, c.is_session_end, c.dwell_known)
        for i, c in enumerate(kept, start=1)
    )
    return QueryRecord(qid, text, issued, tuple(results), clicks, sat, sat_scale)


def parse_session_obj(obj: Any, line: int = 0, report: IngestReport | None = None) -> SearchSession:
    report = report if report is not None else IngestReport()
    if not isinstance(obj, dict):
        raise SchemaError("$", "expected a JSON object", line)
    queries = tuple(
        _parse_query(q, f"queries[{i}]", line, report)
        for i, q in enumerate(_get(obj, "queries", (list,), "$", line))
    )
    session = SearchSession(
        session_id=_get(obj, "session_id", (str,), "$", line),
        user_id=_get(obj, "user_id", (str,), "$", line),
        task_background_text=_get(obj, "task_background_text", (str,), "$", line),
        task_goal_text=_get(obj, "task_goal_text", (str,), "$", line),
        queries=queries,
    )
    try:
        session.validate()
    except SchemaError as exc:
        raise SchemaError(exc.path, str(exc).split(": ", 1)[-1], line) from exc
    except DanglingClick as exc:
        raise DanglingClick(f"line {line}: {exc}") from exc
    return session


def _lines(stream: str | IO[str] | Iterable[str]) -> Iterator[str]:
    if isinstance(stream, str):
        yield from stream.splitlines()
    else:
        for raw in stream:
            yield raw.rstrip("\n")


def parse_sessions(
    stream: str | IO[str] | Iterable[str], report: IngestReport | None = None
) -> list[SearchSession]:
    """Parse session JSONL (text, open file, or iterable of lines) and validate every record."""
    report = report if report is not None else IngestReport()
    sessions: list[SearchSession] = []
    ids: set[str] = set()
    for lineno, line in enumerate(_lines(stream), start=1):
        report.lines = lineno
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(lineno, f"malformed JSON: {exc.msg}") from exc
        s = parse_session_obj(obj, lineno, report)
        if s.session_id in ids:
            raise SchemaError("$.session_id", f"duplicate session id {s.session_id!r}", lineno)
        ids.add(s.session_id)
        sessions.append(s)
    report.sessions = len(sessions)
    if report.duplicate_clicks_dropped:
        log.warning("dropped %d repeat clicks while parsing", report.duplicate_clicks_dropped)
    return sessions


def session_to_obj(s: SearchSession) -> dict[str, Any]:
    return {
        "session_id": s.session_id,
        "user_id": s.user_id,
        "task_background_text": s.task_background_text,
        "task_goal_text": s.task_goal_text,
        "queries": [
            {
                "query_id": q.query_id,
                "query_string_text": q.query_string_text,
                "issue_time": format_time(q.issue_time),
                "satisfaction": q.satisfaction,
                "satisfaction_scale": q.satisfaction_scale,
                "results": [
                    {"doc_id": d.doc_id, "rank": d.rank, "url": d.url, "title": d.title,
                     "content_text": d.content_text}
                    for d in q.results
                ],
                "clicks": [
                    {"doc_id": c.doc_id, "click_order": c.click_order,
                     "click_time": format_time(c.click_time),
                     "dwell_time_seconds": c.dwell_time_seconds if c.dwell_known else None,
                     "is_session_end": c.is_session_end}
                    for c in q.clicks
                ],
            }
            for q in s.queries
        ],
    }


def dumps_sessions(sessions: Iterable[SearchSession]) -> str:
    return "".join(json.dumps(session_to_obj(s), ensure_ascii=False) + "\n" for s in sessions)


def iter_queries(sessions: Iterable[SearchSession]) -> Iterator[tuple[SearchSession, QueryRecord]]:
    for s in sessions:
        for q in s.queries:
            yield s, q


# --------------------------------------------------------------------------- labels


def normalize_label_value(raw: int, raw_min: int, scale: OrdinalScale) -> int:
    if not raw_min <= raw <= raw_min + scale.n - 1:
        raise OutOfRange(f"raw label {raw} outside {raw_min}..{raw_min + scale.n - 1}")
    return raw - raw_min + 1


def label_to_obj(label: UsefulnessLabel, strategy: str | None = None) -> dict[str, Any]:
    obj: dict[str, Any] = {
        "query_id": label.query_id,
        "doc_id": label.doc_id,
        "source": label.source.value,
        "value": label.value,
        "scale_n": label.scale.n,
    }
    if strategy is not None:
        obj["strategy"] = strategy
    return obj


def dumps_labels(labels: Iterable[UsefulnessLabel], strategy: str | None = None) -> str:
    return "".join(
        json.dumps(label_to_obj(l, strategy), sort_keys=True) + "\n" for l in labels
    )


def parse_labels(
    stream: str | IO[str] | Iterable[str],
    raw_min: int = 1,
    source: LabelSource | None = None,
) -> list[UsefulnessLabel]:
    """Read label JSONL, shifting raw values that start at ``raw_min`` onto 1..n."""
    out = []
    scales: dict[int, OrdinalScale] = {}
    for lineno, line in enumerate(_lines(stream), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(lineno, f"malformed JSON: {exc.msg}") from exc
        n = _get(obj, "scale_n", (int,), "$", lineno)
        scale = scales.get(n) or scales.setdefault(n, make_scale(n))
        src = LabelSource.parse(_get(obj, "source", (str,), "$", lineno))
        if source is not None and src != source:
            continue
        try:
            value = normalize_label_value(_get(obj, "value", (int,), "$", lineno), raw_min, scale)
        except OutOfRange as exc:
            raise SchemaError("$.value", str(exc), lineno) from exc
        out.append(
            UsefulnessLabel(
                _get(obj, "query_id", (str,), "$", lineno),
                _get(obj, "doc_id", (str,), "$", lineno),
                src,
                value,
                scale,
            )
        )
    return out


# --------------------------------------------------------------------------- features


def extract_prompt_features(query: QueryRecord, click: ClickEvent, session: SearchSession) -> FeatureBundle:
    pairs = clicked_documents(query)
    target = next((d for d, c in pairs if c.doc_id == click.doc_id), None)
    if target is None:
        raise DanglingClick(f"click on {click.doc_id!r} does not belong to query {query.query_id}")
    ranks = tuple(d.rank for d, _ in pairs)
    dwells = [c.dwell_time_seconds for _, c in pairs]
    return FeatureBundle(
        doc_content_text=target.content_text,
        query_string_text=query.query_string_text,
        task_description_text=session.task_description_text,
        query_total_click_number=len(pairs),
        query_clicked_ranks_list=ranks,
        query_max_clicked_rank=max(ranks) if ranks else 0,
        avg_doc_dwell_time_in_query=sum(dwells) / len(dwells) if dwells else 0.0,
        doc_click_order=click.click_order,
        doc_dwell_time=click.dwell_time_seconds,
        session_end=click.is_session_end,
    )


def build_instances(query: QueryRecord, session: SearchSession) -> list[JudgmentInstance]:
    """Judgment instances for every clicked document, in click order."""
    return [
        JudgmentInstance(query.query_id, doc.doc_id, extract_prompt_features(query, click, session))
        for doc, click in clicked_documents(query)
    ]


def _session_end_time(session: SearchSession) -> datetime | None:
    times = []
    for q in session.queries:
        times.append(q.issue_time)
        for c in q.clicks:
            times.append(c.click_time)
            times.append(c.click_time + timedelta(seconds=c.dwell_time_seconds))
    return max(times) if times else None


def _seconds(a: datetime, b: datetime) -> float:
    return max(0.0, (b - a).total_seconds())


def extract_behavior_vector(query: QueryRecord, session: SearchSession) -> BehaviorVector:
    idx = next((i for i, q in enumerate(session.queries) if q.query_id == query.query_id), None)
    if idx is None:
        raise SchemaError("query_id", f"{query.query_id} is not part of session {session.session_id}")
    end = _session_end_time(session)
    start = session.queries[0].issue_time
    pairs = clicked_documents(query)
    dwells = [c.dwell_time_seconds for _, c in pairs]

    if idx + 1 < len(session.queries):
        query_end = session.queries[idx + 1].issue_time
    else:
        query_end = query.issue_time
        for _, c in pairs:
            query_end = max(query_end, c.click_time + timedelta(seconds=c.dwell_time_seconds))

    values = {
        "session_duration_s": _seconds(start, end) if end else 0.0,
        "num_queries_in_session": float(len(session.queries)),
        "query_length_chars": float(len(query.query_string_text)),
        "query_dwell_time_s": _seconds(query.issue_time, query_end),
        "num_clicks": float(len(pairs)),
        "time_to_first_click_s": _seconds(query.issue_time, pairs[0][1].click_time) if pairs else 0.0,
        "avg_click_dwell_s": sum(dwells) / len(dwells) if dwells else 0.0,
        "max_click_dwell_s": max(dwells) if dwells else 0.0,
        "max_clicked_rank": float(max((d.rank for d, _ in pairs), default=0)),
        "is_last_query_in_session": 1.0 if idx == len(session.queries) - 1 else 0.0,
    }
    return BehaviorVector(query.query_id, values, all(c.dwell_known for _, c in pairs))


def corpus_stats(sessions: Iterable[SearchSession]) -> CorpusStats:
    tasks: set[tuple[str, str]] = set()
    users: set[str] = set()
    docs: set[str] = set()
    n_queries = n_clicked = 0
    for s in sessions:
        users.add(s.user_id)
        if s.task_background_text or s.task_goal_text:
            tasks.add((s.task_background_text, s.task_goal_text))
        for q in s.queries:
            n_queries += 1
            n_clicked += len(q.clicks)
            docs.update(d.doc_id for d in q.results)
    return CorpusStats(
        num_tasks=len(tasks),
        num_users=len(users),
        num_queries=n_queries,
        num_docs=len(docs),
        num_clicked_docs=n_clicked,
        clicks_per_query=n_clicked / n_queries if n_queries else 0.0,
    )
