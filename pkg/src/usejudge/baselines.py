"""Comparison strategies: pointwise grading, pairwise and listwise ranking with
segmentation into levels, and pointwise relevance grading of any result."""

from __future__ import annotations

import logging
from concurrent.futures import Executor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

from .backend import JudgeContext, parse_levels, parse_ranking, parse_score
from .core import DocRecord, JudgmentInstance, LabelSource, OrdinalScale, UsefulnessLabel
from .prompts import (
    GuidelineSet,
    build_listwise_prompt,
    build_pairwise_prompt,
    build_pointwise_prompt,
    build_relevance_prompt,
    build_segmentation_prompt,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RankingResult:
    query_id: str
    order: tuple[str, ...]
    ties: tuple[tuple[str, ...], ...] = ()
    scores: dict[str, float] = field(default_factory=dict)


def judge_pointwise(
    instance: JudgmentInstance,
    scale: OrdinalScale,
    ctx: JudgeContext,
    guidelines: GuidelineSet = GuidelineSet(),
    raw_min: int = 1,
) -> UsefulnessLabel:
    prompt = build_pointwise_prompt(instance, scale, guidelines, raw_min=raw_min)
    parsed = ctx.ask_parsed(prompt, lambda r: parse_score(r, scale, raw_min))
    if parsed.clamped:
        ctx.note(prompt, f"grade {parsed.raw_value} clamped into range")
    return UsefulnessLabel(instance.query_ref, instance.doc_ref, LabelSource.LLM_USEFULNESS, parsed.value, scale)


def judge_relevance_pointwise(
    query_id: str,
    query_text: str,
    doc: DocRecord,
    scale: OrdinalScale,
    ctx: JudgeContext,
    raw_min: int = 1,
) -> UsefulnessLabel:
    prompt = build_relevance_prompt(query_id, query_text, doc.doc_id, doc.content_text, scale, raw_min=raw_min)
    parsed = ctx.ask_parsed(prompt, lambda r: parse_score(r, scale, raw_min))
    if parsed.clamped:
        ctx.note(prompt, f"grade {parsed.raw_value} clamped into range")
    return UsefulnessLabel(query_id, doc.doc_id, LabelSource.LLM_RELEVANCE, parsed.value, scale)


def _click_rank(instances: Sequence[JudgmentInstance]) -> dict[str, int]:
    return {x.doc_ref: x.features.doc_click_order for x in instances}


def copeland_ranking(
    query_id: str, instances: Sequence[JudgmentInstance], wins: dict[str, int]
) -> RankingResult:
    """Order by wins, most first; equal wins fall back to click order."""
    order_key = _click_rank(instances)
    ranked = sorted(wins, key=lambda d: (-wins[d], order_key[d]))
    groups: dict[int, list[str]] = {}
    for d in ranked:
        groups.setdefault(wins[d], []).append(d)
    ties = tuple(tuple(g) for g in groups.values() if len(g) > 1)
    return RankingResult(query_id, tuple(ranked), ties, {d: float(w) for d, w in wins.items()})


def judge_pairwise(
    query_id: str,
    instances: Sequence[JudgmentInstance],
    ctx: JudgeContext,
    guidelines: GuidelineSet = GuidelineSet(),
    pool: Executor | None = None,
) -> RankingResult:
    """Every unordered pair judged once (m(m-1)/2 calls); Copeland aggregation."""
    wins = {x.doc_ref: 0 for x in instances}
    prompts = [build_pairwise_prompt(a, b, guidelines) for a, b in combinations(instances, 2)]
    if pool is None:
        replies = [ctx.select(p) for p in prompts]
    else:
        replies = [f.result() for f in [pool.submit(ctx.select, p) for p in prompts]]
    for prompt, sel in zip(prompts, replies):
        if len(sel.selected_ids) != 1:
            ctx.note(prompt, f"pairwise reply chose {len(sel.selected_ids)} documents, counted as a tie")
            continue
        wins[prompt.doc_for_tag(sel.selected_ids[0])] += 1
    return copeland_ranking(query_id, instances, wins)


def judge_listwise(
    query_id: str,
    instances: Sequence[JudgmentInstance],
    ctx: JudgeContext,
    guidelines: GuidelineSet = GuidelineSet(),
) -> RankingResult:
    if len(instances) == 1:
        return RankingResult(query_id, (instances[0].doc_ref,))
    prompt = build_listwise_prompt(instances, guidelines)
    ranked, missing = ctx.ask_parsed(prompt, lambda r: parse_ranking(r, prompt.valid_doc_ids))
    if missing:
        ctx.note(prompt, f"ranking omitted {missing}; appended in click order")
    tags = ranked + missing
    return RankingResult(query_id, tuple(prompt.doc_for_tag(t) for t in tags))


def block_sizes(m: int, n: int) -> list[int]:
    """Equal-frequency sizes for n contiguous blocks, largest first, differing by at most one."""
    base, extra = divmod(m, n)
    return [base + (1 if i < extra else 0) for i in range(n)]


def segment_ranking(
    ranking: RankingResult,
    scale: OrdinalScale,
    ctx: JudgeContext | None = None,
    source: LabelSource = LabelSource.LLM_USEFULNESS,
) -> list[UsefulnessLabel]:
    """Cut a ranking into levels, top block at C_n.

    The default is a deterministic equal-frequency cut. Passing ``ctx`` asks the
    backend for the cut instead; its answer is forced monotone along the ranking.
    """
    docs = ranking.order
    if not docs:
        return []
    if ctx is None:
        levels = []
        for offset, size in enumerate(block_sizes(len(docs), scale.n)):
            levels += [scale.n - offset] * size
    else:
        prompt = build_segmentation_prompt(ranking.query_id, docs, scale)
        raw_levels = ctx.ask_parsed(prompt, lambda r: parse_levels(r, len(docs), scale))
        levels, low = [], scale.n
        for v in raw_levels:
            low = min(low, v)
            levels.append(low)
    return [UsefulnessLabel(ranking.query_id, d, source, v, scale) for d, v in zip(docs, levels)]


STRATEGIES = ("cascade", "pointwise", "pairwise", "listwise", "relevance")


def judge_query_baseline(
    strategy: str,
    query_id: str,
    instances: Sequence[JudgmentInstance],
    scale: OrdinalScale,
    ctx: JudgeContext,
    guidelines: GuidelineSet = GuidelineSet(),
    llm_segmentation: bool = False,
) -> list[UsefulnessLabel]:
    """Usefulness labels for a query's clicked documents under one baseline strategy."""
    if not instances:
        return []
    if strategy == "pointwise":
        return [judge_pointwise(x, scale, ctx, guidelines) for x in instances]
    if strategy == "pairwise":
        ranking = judge_pairwise(query_id, instances, ctx, guidelines)
    elif strategy == "listwise":
        ranking = judge_listwise(query_id, instances, ctx, guidelines)
    else:
        raise ValueError(f"unknown baseline strategy {strategy!r}")
    return segment_ranking(ranking, scale, ctx if llm_segmentation else None)
