"""Domain types shared across the package: sessions, queries, clicks, labels."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from datetime import datetime
from typing import TYPE_CHECKING, Iterable, Sequence

from .errors import ArityMismatch, DanglingClick, DuplicateLabel, OutOfRange, SchemaError

if TYPE_CHECKING:
    from .ingest import FeatureBundle

MIN_LEVELS = 2
MAX_LEVELS = 10


@dataclass(frozen=True)
class OrdinalScale:
    """Ordered categories ``C1 < C2 < ... < Cn``; values are the integers 1..n."""

    n: int
    level_names: tuple[str, ...]

    def __post_init__(self) -> None:
        if not MIN_LEVELS <= self.n <= MAX_LEVELS:
            raise OutOfRange(f"scale must have {MIN_LEVELS}..{MAX_LEVELS} levels, got {self.n}")
        if len(self.level_names) != self.n:
            raise ArityMismatch(f"{len(self.level_names)} names for {self.n} levels")

    @property
    def levels(self) -> range:
        return range(1, self.n + 1)

    def name(self, value: int) -> str:
        self.check(value)
        return self.level_names[value - 1]

    def check(self, value: int) -> int:
        if not 1 <= value <= self.n:
            raise OutOfRange(f"value {value} outside 1..{self.n}")
        return value


def make_scale(n: int, names: Sequence[str] | None = None) -> OrdinalScale:
    if not MIN_LEVELS <= n <= MAX_LEVELS:
        raise OutOfRange(f"scale must have {MIN_LEVELS}..{MAX_LEVELS} levels, got {n}")
    if names is None:
        names = [f"C{i}" for i in range(1, n + 1)]
    elif len(names) != n:
        raise ArityMismatch(f"{len(names)} names for {n} levels")
    return OrdinalScale(n, tuple(names))


class LabelSource(str, enum.Enum):
    USER_USEFULNESS = "user_usefulness"
    THIRD_PARTY_USEFULNESS = "third_party_usefulness"
    THIRD_PARTY_RELEVANCE = "third_party_relevance"
    LLM_USEFULNESS = "llm_usefulness"
    LLM_RELEVANCE = "llm_relevance"

    @property
    def short(self) -> str:
        """Compact tag used in column names, e.g. ``u_llm``."""
        return _SHORT[self]

    @classmethod
    def parse(cls, text: str) -> "LabelSource":
        key = text.strip()
        for src in cls:
            if key in (src.value, src.name, src.short) or key.lower() == src.short:
                return src
        raise SchemaError("source", f"unknown label source {text!r}")


_SHORT = {
    LabelSource.USER_USEFULNESS: "u_u",
    LabelSource.THIRD_PARTY_USEFULNESS: "u_a",
    LabelSource.THIRD_PARTY_RELEVANCE: "r_a",
    LabelSource.LLM_USEFULNESS: "u_llm",
    LabelSource.LLM_RELEVANCE: "r_llm",
}


@dataclass(frozen=True)
class DocRecord:
    doc_id: str
    rank: int
    url: str = ""
    title: str = ""
    content_text: str = ""


@dataclass(frozen=True)
class ClickEvent:
    doc_id: str
    click_order: int
    click_time: datetime
    dwell_time_seconds: float
    is_session_end: bool = False
    # False when the log carried no dwell value; dwell_time_seconds is then 0.
    dwell_known: bool = True


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    query_string_text: str
    issue_time: datetime
    results: tuple[DocRecord, ...] = ()
    clicks: tuple[ClickEvent, ...] = ()
    satisfaction: int | None = None
    satisfaction_scale: int | None = None

    def doc(self, doc_id: str) -> DocRecord:
        for d in self.results:
            if d.doc_id == doc_id:
                return d
        raise DanglingClick(f"query {self.query_id}: doc {doc_id!r} not among results")

    def validate(self) -> None:
        ids = [d.doc_id for d in self.results]
        if len(set(ids)) != len(ids):
            raise SchemaError(f"queries[{self.query_id}].results", "duplicate doc_id")
        if sorted(d.rank for d in self.results) != list(range(1, len(ids) + 1)):
            raise SchemaError(f"queries[{self.query_id}].results", "ranks must be contiguous from 1")
        known = set(ids)
        for c in self.clicks:
            if c.doc_id not in known:
                raise DanglingClick(f"query {self.query_id}: click on unknown doc {c.doc_id!r}")
            if c.dwell_time_seconds < 0:
                raise SchemaError(f"queries[{self.query_id}].clicks", "negative dwell time")
        if sorted(c.click_order for c in self.clicks) != list(range(1, len(self.clicks) + 1)):
            raise SchemaError(f"queries[{self.query_id}].clicks", "click_order must be 1..k without gaps")
        if len({c.doc_id for c in self.clicks}) != len(self.clicks):
            raise SchemaError(f"queries[{self.query_id}].clicks", "more than one click per doc")
        if self.satisfaction is not None and self.satisfaction_scale is not None:
            if not 1 <= self.satisfaction <= self.satisfaction_scale:
                raise SchemaError(f"queries[{self.query_id}].satisfaction", "outside its scale")


@dataclass(frozen=True)
class SearchSession:
    session_id: str
    user_id: str
    task_background_text: str = ""
    task_goal_text: str = ""
    queries: tuple[QueryRecord, ...] = ()

    def validate(self) -> None:
        for q in self.queries:
            q.validate()
        times = [q.issue_time for q in self.queries]
        if any(b < a for a, b in zip(times, times[1:])):
            raise SchemaError(f"sessions[{self.session_id}].queries", "issue times decrease")

    @property
    def task_description_text(self) -> str:
        parts = [p for p in (self.task_background_text.strip(), self.task_goal_text.strip()) if p]
        return " ".join(parts)


@dataclass(frozen=True)
class UsefulnessLabel:
    query_id: str
    doc_id: str
    source: LabelSource
    value: int
    scale: OrdinalScale = field(compare=True)

    def __post_init__(self) -> None:
        self.scale.check(self.value)

    @property
    def key(self) -> tuple[str, str]:
        return (self.query_id, self.doc_id)


@dataclass(frozen=True)
class JudgmentInstance:
    """One judging unit: a clicked document of a query plus its feature bundle."""

    query_ref: str
    doc_ref: str
    features: "FeatureBundle"


def clicked_documents(query: QueryRecord) -> list[tuple[DocRecord, ClickEvent]]:
    by_id = {d.doc_id: d for d in query.results}
    out = []
    for click in sorted(query.clicks, key=lambda c: c.click_order):
        doc = by_id.get(click.doc_id)
        if doc is None:
            raise DanglingClick(f"query {query.query_id}: click on unknown doc {click.doc_id!r}")
        out.append((doc, click))
    return out


def index_labels(
    labels: Iterable[UsefulnessLabel], source: LabelSource | None = None
) -> dict[tuple[str, str], UsefulnessLabel]:
    """Key labels by (query_id, doc_id), optionally keeping one source only.

    Raises DuplicateLabel when the same (query_id, doc_id, source) appears twice.
    """
    seen: set[tuple[str, str, LabelSource]] = set()
    out: dict[tuple[str, str], UsefulnessLabel] = {}
    for lab in labels:
        k3 = (lab.query_id, lab.doc_id, lab.source)
        if k3 in seen:
            raise DuplicateLabel(f"duplicate label for {k3}")
        seen.add(k3)
        if source is None or lab.source == source:
            if lab.key in out and source is None:
                raise DuplicateLabel(f"labels from several sources for {lab.key}; pass source=")
            out[lab.key] = lab
    return out


def sort_labels(labels: Iterable[UsefulnessLabel]) -> list[UsefulnessLabel]:
    return sorted(labels, key=lambda l: (l.query_id, l.doc_id, l.source.value))
