"""Cascaded usefulness judging with multi-voter majority selection.

For an n-level scale the cascade runs stages k = n, n-1, ..., 2 over the clicked
documents of one query. At each stage M voters see the still-unassigned
documents, each in its own order, and select those reaching level C_k. A
document selected by a strict majority (more than M/2 voters) is assigned C_k
and leaves the pool; whatever survives stage 2 is assigned C_1.

With one voter and a backend that answers each stage by the sign of a linear
score this reduces to the cascade linear utility model, which
``judge_linear_reference`` evaluates directly.
"""

from __future__ import annotations

import logging
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .backend import JudgeContext, ParsedSelection
from .core import JudgmentInstance, LabelSource, OrdinalScale, QueryRecord, UsefulnessLabel, sort_labels
from .errors import DimensionMismatch, EvenVoterCount
from .prompts import (
    CONTENT_CHAR_BUDGET,
    GuidelineSet,
    PromptSpec,
    build_cascade_prompt,
    permutation_for_voter,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CascadeConfig:
    scale: OrdinalScale
    num_voters: int = 5
    guidelines: GuidelineSet = GuidelineSet()
    seed: int = 0
    content_char_budget: int = CONTENT_CHAR_BUDGET

    def __post_init__(self) -> None:
        check_voters(self.num_voters)


def check_voters(m: int) -> int:
    if m < 1 or m % 2 == 0:
        raise EvenVoterCount(f"voters must be odd and >= 1, got {m}")
    return m


@dataclass
class VoteTally:
    """Selection counts per (stage, doc)."""

    num_voters: int
    counts: dict[tuple[int, str], int] = field(default_factory=dict)

    def add(self, stage_k: int, doc_id: str) -> None:
        key = (stage_k, doc_id)
        self.counts[key] = self.counts.get(key, 0) + 1

    def stage(self, stage_k: int) -> dict[str, int]:
        return {d: c for (k, d), c in self.counts.items() if k == stage_k}


def assign_majority(tally: Mapping[str, int], num_voters: int) -> set[str]:
    """Ids selected by strictly more than half of the voters."""
    if num_voters % 2 == 0:
        raise EvenVoterCount(f"voters must be odd, got {num_voters}")
    return {d for d, c in tally.items() if 2 * c > num_voters}


@dataclass(frozen=True)
class LinearStageClassifier:
    weights: np.ndarray
    bias: float

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if not np.all(np.isfinite(w)) or not np.isfinite(self.bias):
            raise ValueError("classifier parameters must be finite")
        object.__setattr__(self, "weights", w)

    def score(self, x: np.ndarray) -> float:
        if x.shape != self.weights.shape:
            raise DimensionMismatch(f"feature dim {x.shape} vs weights {self.weights.shape}")
        return float(self.weights @ x + self.bias)


def judge_linear_reference(x: Sequence[float], classifiers: Sequence[LinearStageClassifier]) -> int:
    """Level from classifiers ordered k = n..2: the first with a positive score wins, else 1."""
    v = np.asarray(x, dtype=float)
    n = len(classifiers) + 1
    for offset, clf in enumerate(classifiers):
        if clf.score(v) > 0:
            return n - offset
    return 1


def call_budget(scale: OrdinalScale, num_voters: int, query: QueryRecord | int) -> int:
    clicks = query if isinstance(query, int) else len(query.clicks)
    return num_voters * (scale.n - 1) if clicks >= 1 else 0


@dataclass
class StageRecord:
    stage_k: int
    remaining: list[str]
    prompt_digests: list[str]
    selections: list[list[str]]
    tally: dict[str, int]
    assigned: list[str]

    def to_obj(self) -> dict[str, Any]:
        return {
            "stage_k": self.stage_k,
            "remaining": self.remaining,
            "prompt_digests": self.prompt_digests,
            "selections": self.selections,
            "tally": self.tally,
            "assigned": self.assigned,
        }


@dataclass
class JudgmentTrace:
    query_id: str
    stages: list[StageRecord] = field(default_factory=list)
    final: dict[str, int] = field(default_factory=dict)

    @property
    def backend_prompts(self) -> int:
        return sum(len(s.prompt_digests) for s in self.stages)

    def to_obj(self) -> dict[str, Any]:
        return {
            "query_id": self.query_id,
            "stages": [s.to_obj() for s in self.stages],
            "final": dict(sorted(self.final.items())),
        }


def _run_voters(
    ctx: JudgeContext, prompts: list[PromptSpec], pool: Executor | None
) -> list[ParsedSelection]:
    if pool is None or len(prompts) == 1:
        return [ctx.select(p) for p in prompts]
    futures = [pool.submit(ctx.select, p) for p in prompts]
    return [f.result() for f in futures]


def judge_query_cascade(
    query_id: str,
    instances: Sequence[JudgmentInstance],
    config: CascadeConfig,
    ctx: JudgeContext,
    voter_pool: Executor | None = None,
) -> tuple[list[UsefulnessLabel], JudgmentTrace]:
    scale, m = config.scale, config.num_voters
    trace = JudgmentTrace(query_id)
    remaining = list(instances)
    assigned: dict[str, int] = {}

    for k in range(scale.n, 1, -1):
        if not remaining:
            break
        prompts = [
            build_cascade_prompt(
                query_id,
                remaining,
                k,
                config.guidelines,
                permutation_for_voter(query_id, k, j, len(remaining), config.seed),
                scale,
                voter_j=j,
                content_char_budget=config.content_char_budget,
            )
            for j in range(1, m + 1)
        ]
        # tally only after every reply is in, so arrival order cannot matter
        selections = _run_voters(ctx, prompts, voter_pool)
        tally = {x.doc_ref: 0 for x in remaining}
        chosen_docs = []
        for prompt, sel in zip(prompts, selections):
            docs = [prompt.doc_for_tag(t) for t in sel.selected_ids]
            chosen_docs.append(docs)
            for d in docs:
                tally[d] += 1
        winners = assign_majority(tally, m)
        stage_assigned = [x.doc_ref for x in remaining if x.doc_ref in winners]
        for d in stage_assigned:
            assigned[d] = k
        trace.stages.append(
            StageRecord(k, [x.doc_ref for x in remaining], [p.digest for p in prompts],
                        chosen_docs, tally, stage_assigned)
        )
        remaining = [x for x in remaining if x.doc_ref not in winners]

    for x in remaining:
        assigned[x.doc_ref] = 1
    trace.final = assigned
    labels = [
        UsefulnessLabel(query_id, x.doc_ref, LabelSource.LLM_USEFULNESS, assigned[x.doc_ref], scale)
        for x in instances
    ]
    return labels, trace


def judge_corpus_cascade(
    work: Iterable[tuple[str, Sequence[JudgmentInstance]]],
    config: CascadeConfig,
    ctx: JudgeContext,
    workers: int = 1,
) -> tuple[list[UsefulnessLabel], list[JudgmentTrace]]:
    """Judge many queries; output is sorted by (query_id, doc_id) whatever the scheduling."""
    items = [(q, list(xs)) for q, xs in work if xs]
    labels: list[UsefulnessLabel] = []
    traces: list[JudgmentTrace] = []
    if workers <= 1:
        for qid, xs in items:
            lab, tr = judge_query_cascade(qid, xs, config, ctx)
            labels += lab
            traces.append(tr)
    else:
        with ThreadPoolExecutor(workers) as voter_pool, ThreadPoolExecutor(workers) as query_pool:
            futures = [
                query_pool.submit(judge_query_cascade, qid, xs, config, ctx, voter_pool)
                for qid, xs in items
            ]
            for f in futures:
                lab, tr = f.result()
                labels += lab
                traces.append(tr)
    traces.sort(key=lambda t: t.query_id)
    return sort_labels(labels), traces
