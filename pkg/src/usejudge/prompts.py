"""Prompt rendering for the cascade, the baselines and the fine-tuning export.

Prompts follow a description / narrative / aspects layout: a role statement, the
task goal (when the log has one), the query, the guideline adjectives as the
aspect list, one block per document tagged ``[1]``, ``[2]`` ..., then the
criterion and the output format.
"""

from __future__ import annotations

import enum
import hashlib
import json
import random
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .core import JudgmentInstance, OrdinalScale, UsefulnessLabel
from .errors import EmptyDocList, MissingGold, OutOfRange

DEFAULT_GUIDELINES = ("helpful", "detailed", "related", "encyclopedic", "specific", "comprehensive")
CONTENT_CHAR_BUDGET = 4000
TRUNCATION_MARKER = "…[truncated]"
REASK_SUFFIX = "\n\nReply with only the JSON object."
CONTENT_MISSING = "ContentMissing: the text of this document is not available."


class PromptMode(str, enum.Enum):
    USEFULNESS_CASCADE = "usefulness_cascade"
    RELEVANCE_POINTWISE = "relevance_pointwise"
    POINTWISE_USEFULNESS = "pointwise_usefulness"
    PAIRWISE = "pairwise"
    LISTWISE = "listwise"
    SEGMENTATION = "segmentation"


@dataclass(frozen=True)
class GuidelineSet:
    adjectives: tuple[str, ...] = DEFAULT_GUIDELINES
    origin: str = "think-aloud word frequency"

    def __post_init__(self) -> None:
        if not self.adjectives:
            raise ValueError("guideline set is empty")
        if len(set(self.adjectives)) != len(self.adjectives):
            raise ValueError("guideline adjectives repeat")


@dataclass(frozen=True)
class PromptSpec:
    """A rendered prompt for one backend call.

    ``valid_doc_ids`` are the bracket tags shown to the model and ``doc_ids``
    the corpus document ids they stand for, index-aligned.
    """

    mode: PromptMode
    query_id: str
    rendered_text: str
    valid_doc_ids: tuple[str, ...]
    doc_ids: tuple[str, ...]
    permutation: tuple[int, ...] = ()
    stage_k: int | None = None
    voter_j: int = 1
    scale_n: int = 0
    raw_min: int = 1
    expects_reasoning: bool = True

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.rendered_text.encode("utf-8")).hexdigest()

    def doc_for_tag(self, tag: str) -> str:
        return self.doc_ids[self.valid_doc_ids.index(tag)]

    def tag_for_doc(self, doc_id: str) -> str:
        return self.valid_doc_ids[self.doc_ids.index(doc_id)]

    def reask(self) -> "PromptSpec":
        return PromptSpec(
            self.mode, self.query_id, self.rendered_text + REASK_SUFFIX, self.valid_doc_ids,
            self.doc_ids, self.permutation, self.stage_k, self.voter_j, self.scale_n,
            self.raw_min, False,
        )


@dataclass(frozen=True)
class FinetuneRecord:
    instruction: str
    input: str
    output: str
    stage_k: int
    query_id: str = ""

    def to_obj(self) -> dict[str, str]:
        return {"instruction": self.instruction, "input": self.input, "output": self.output}


# --------------------------------------------------------------------------- text helpers

_TAG_LIKE = re.compile(r"\[(\s*\w+\s*)\]")


def _sanitize(text: str) -> str:
    # bracketed tokens in document text would be confused with document tags
    return _TAG_LIKE.sub(r"(\1)", text)


def truncate(text: str, budget: int = CONTENT_CHAR_BUDGET) -> str:
    if len(text) <= budget:
        return text
    return text[:budget] + TRUNCATION_MARKER


def _fmt_seconds(x: float) -> str:
    return f"{x:.1f} s"


def _level_phrase(scale: OrdinalScale, k: int) -> str:
    name = scale.name(k)
    return f"C{k}" if name == f"C{k}" else f'C{k} ("{name}")'


def _role(what: str) -> str:
    return (
        "You are a search quality rater. A real user issued the query below while working "
        f"on a search task, and you are asked to {what}."
    )


def _goal_block(task: str) -> str:
    return f"GOAL\n{_sanitize(task)}\n\n" if task.strip() else ""


def _aspect_block(guidelines: GuidelineSet) -> str:
    return (
        "ASPECTS\nUsers describe documents that served them well as: "
        + ", ".join(guidelines.adjectives)
        + ".\n\n"
    )


def _doc_block(tag: str, inst: JudgmentInstance, budget: int, behavior: bool = True) -> str:
    f = inst.features
    content = truncate(_sanitize(f.doc_content_text), budget) if f.doc_content_text else CONTENT_MISSING
    lines = [f"[{tag}]", f"content: {content}"]
    if behavior:
        ranks = ", ".join(str(r) for r in f.query_clicked_ranks_list)
        lines += [
            f"query_total_click_number: {f.query_total_click_number}",
            f"query_clicked_ranks_list: ({ranks})",
            f"query_max_clicked_rank: {f.query_max_clicked_rank}",
            f"avg_doc_dwell_time_in_query: {_fmt_seconds(f.avg_doc_dwell_time_in_query)}",
            f"doc_click_order: {f.doc_click_order}",
            f"doc_dwell_time: {_fmt_seconds(f.doc_dwell_time)}",
            f"session_end: {'yes' if f.session_end else 'no'}",
        ]
    return "\n".join(lines) + "\n\n"


def _query_text(instances: Sequence[JudgmentInstance]) -> tuple[str, str]:
    f = instances[0].features
    return f.query_string_text, f.task_description_text


def _check_perm(permutation: Sequence[int], m: int) -> tuple[int, ...]:
    perm = tuple(int(p) for p in permutation)
    if sorted(perm) != list(range(1, m + 1)):
        raise ValueError(f"permutation {perm} is not a bijection over 1..{m}")
    return perm


# --------------------------------------------------------------------------- cascade


def _cascade_parts(
    query_id: str,
    instances: Sequence[JudgmentInstance],
    stage_k: int,
    guidelines: GuidelineSet,
    permutation: Sequence[int],
    scale: OrdinalScale,
    budget: int,
) -> tuple[str, str, str, tuple[int, ...]]:
    if not instances:
        raise EmptyDocList(f"no documents to judge for query {query_id}")
    if not 2 <= stage_k <= scale.n:
        raise OutOfRange(f"stage {stage_k} outside 2..{scale.n}")
    perm = _check_perm(permutation, len(instances))
    query, task = _query_text(instances)
    role = _role("judge how useful each clicked document was to that user") + "\n\n"
    context = _goal_block(task) + f"QUERY\n{_sanitize(query)}\n\n" + _aspect_block(guidelines)
    context += "DOCUMENTS\n\n" + "".join(_doc_block(str(p), instances[p - 1], budget) for p in perm)
    lowest, highest = _level_phrase(scale, 1), _level_phrase(scale, scale.n)
    tail = (
        f"CRITERION\nUsefulness is graded from {lowest}, the lowest, to {highest}, the highest. "
        f"Select every document whose usefulness to this user reaches level "
        f"{_level_phrase(scale, stage_k)}. You may select none, one, or several documents.\n\n"
        "OUTPUT\nFirst reason about the user's goal and each document, then give your answer as "
        'one JSON object: {"thought": "<your reasoning>", "selected": ["<document id>", ...]}. '
        'The "selected" list may be empty.'
    )
    return role, context, tail, perm


def build_cascade_prompt(
    query_id: str,
    remaining_instances: Sequence[JudgmentInstance],
    stage_k: int,
    guidelines: GuidelineSet,
    permutation: Sequence[int],
    scale: OrdinalScale,
    *,
    voter_j: int = 1,
    content_char_budget: int = CONTENT_CHAR_BUDGET,
) -> PromptSpec:
    role, context, tail, perm = _cascade_parts(
        query_id, remaining_instances, stage_k, guidelines, permutation, scale, content_char_budget
    )
    m = len(remaining_instances)
    return PromptSpec(
        mode=PromptMode.USEFULNESS_CASCADE,
        query_id=query_id,
        rendered_text=role + context + tail,
        valid_doc_ids=tuple(str(i) for i in range(1, m + 1)),
        doc_ids=tuple(x.doc_ref for x in remaining_instances),
        permutation=perm,
        stage_k=stage_k,
        voter_j=voter_j,
        scale_n=scale.n,
    )


def permutation_for_voter(
    query_id: str, stage_k: int, voter_j: int, length: int, seed: int = 0
) -> list[int]:
    """Document order shown to one voter: identity for voter 1, a seeded shuffle otherwise."""
    if length < 1:
        raise ValueError("length must be >= 1")
    perm = list(range(1, length + 1))
    if voter_j == 1 or length == 1:
        return perm
    key = f"{seed}|{query_id}|{stage_k}|{voter_j}".encode("utf-8")
    random.Random(int.from_bytes(hashlib.sha256(key).digest()[:8], "big")).shuffle(perm)
    return perm


def _gold_lookup(gold: Mapping[tuple[str, str], int] | Iterable[UsefulnessLabel]) -> dict:
    if isinstance(gold, Mapping):
        return dict(gold)
    return {lab.key: lab.value for lab in gold}


def export_finetune_set(
    gold: Mapping[tuple[str, str], int] | Iterable[UsefulnessLabel],
    instances: Sequence[JudgmentInstance],
    stage_k: int,
    scale: OrdinalScale,
    guidelines: GuidelineSet = GuidelineSet(),
) -> list[FinetuneRecord]:
    """Training records for the stage-k selector: one per query, over instances with gold <= C_k."""
    if not 2 <= stage_k <= scale.n:
        raise OutOfRange(f"stage {stage_k} outside 2..{scale.n}")
    values = _gold_lookup(gold)
    missing = [(x.query_ref, x.doc_ref) for x in instances if (x.query_ref, x.doc_ref) not in values]
    if missing:
        raise MissingGold(f"{len(missing)} instances without gold, first {missing[0]}")

    by_query: dict[str, list[JudgmentInstance]] = {}
    for x in instances:
        by_query.setdefault(x.query_ref, []).append(x)

    records = []
    for qid, group in by_query.items():
        members = [x for x in group if values[(x.query_ref, x.doc_ref)] <= stage_k]
        if not members:
            continue
        ident = list(range(1, len(members) + 1))
        role, context, tail, _ = _cascade_parts(
            qid, members, stage_k, guidelines, ident, scale, CONTENT_CHAR_BUDGET
        )
        chosen = [str(i) for i, x in enumerate(members, 1) if values[(x.query_ref, x.doc_ref)] == stage_k]
        records.append(
            FinetuneRecord(
                instruction=role + tail,
                input=context.rstrip("\n"),
                output=json.dumps({"selected": chosen}),
                stage_k=stage_k,
                query_id=qid,
            )
        )
    return records


# --------------------------------------------------------------------------- other modes


def _score_format(scale: OrdinalScale, raw_min: int) -> str:
    hi = raw_min + scale.n - 1
    return (
        "OUTPUT\nFirst reason briefly, then give your answer as one JSON object: "
        f'{{"thought": "<your reasoning>", "score": <integer from {raw_min} to {hi}>}}.'
    )


def build_relevance_prompt(
    query_id: str,
    query_text: str,
    doc_id: str,
    content_text: str,
    scale: OrdinalScale,
    *,
    raw_min: int = 1,
    content_char_budget: int = CONTENT_CHAR_BUDGET,
) -> PromptSpec:
    """Graded topical relevance of one result; shows the query and the content only."""
    hi = raw_min + scale.n - 1
    content = truncate(_sanitize(content_text), content_char_budget) if content_text.strip() else CONTENT_MISSING
    text = (
        "You are a search quality rater. Given a query and a web page, judge how well the "
        "page matches the information need behind the query.\n\n"
        f"QUERY\n{_sanitize(query_text)}\n\n"
        f"DOCUMENTS\n\n[1]\ncontent: {content}\n\n"
        f"SCALE\nUse {scale.n} grades, from {raw_min} (the page has nothing to do with the query) "
        f"to {hi} (the page is devoted to the query and answers it fully). "
        "The grades are: "
        + ", ".join(f"{raw_min + i} = {_level_phrase(scale, i + 1)}" for i in range(scale.n))
        + ".\n\n"
        + _score_format(scale, raw_min)
    )
    return PromptSpec(
        mode=PromptMode.RELEVANCE_POINTWISE,
        query_id=query_id,
        rendered_text=text,
        valid_doc_ids=("1",),
        doc_ids=(doc_id,),
        permutation=(1,),
        scale_n=scale.n,
        raw_min=raw_min,
    )


def build_pointwise_prompt(
    instance: JudgmentInstance,
    scale: OrdinalScale,
    guidelines: GuidelineSet = GuidelineSet(),
    *,
    raw_min: int = 1,
    content_char_budget: int = CONTENT_CHAR_BUDGET,
) -> PromptSpec:
    query, task = _query_text([instance])
    hi = raw_min + scale.n - 1
    text = (
        _role("grade how useful one clicked document was to that user")
        + "\n\n"
        + _goal_block(task)
        + f"QUERY\n{_sanitize(query)}\n\n"
        + _aspect_block(guidelines)
        + "DOCUMENTS\n\n"
        + _doc_block("1", instance, content_char_budget)
        + f"SCALE\nGrade usefulness from {raw_min} (not useful at all) to {hi} (very useful).\n\n"
        + _score_format(scale, raw_min)
    )
    return PromptSpec(
        mode=PromptMode.POINTWISE_USEFULNESS,
        query_id=instance.query_ref,
        rendered_text=text,
        valid_doc_ids=("1",),
        doc_ids=(instance.doc_ref,),
        permutation=(1,),
        scale_n=scale.n,
        raw_min=raw_min,
    )


def build_pairwise_prompt(
    first: JudgmentInstance,
    second: JudgmentInstance,
    guidelines: GuidelineSet = GuidelineSet(),
    *,
    content_char_budget: int = CONTENT_CHAR_BUDGET,
) -> PromptSpec:
    query, task = _query_text([first])
    text = (
        _role("decide which of two clicked documents was more useful to that user")
        + "\n\n"
        + _goal_block(task)
        + f"QUERY\n{_sanitize(query)}\n\n"
        + _aspect_block(guidelines)
        + "DOCUMENTS\n\n"
        + _doc_block("1", first, content_char_budget)
        + _doc_block("2", second, content_char_budget)
        + "OUTPUT\nFirst reason briefly, then give your answer as one JSON object: "
        '{"thought": "<your reasoning>", "selected": ["<id of the more useful document>"]}.'
    )
    return PromptSpec(
        mode=PromptMode.PAIRWISE,
        query_id=first.query_ref,
        rendered_text=text,
        valid_doc_ids=("1", "2"),
        doc_ids=(first.doc_ref, second.doc_ref),
        permutation=(1, 2),
    )


def build_listwise_prompt(
    instances: Sequence[JudgmentInstance],
    guidelines: GuidelineSet = GuidelineSet(),
    *,
    content_char_budget: int = CONTENT_CHAR_BUDGET,
) -> PromptSpec:
    if not instances:
        raise EmptyDocList("listwise prompt needs at least one document")
    query, task = _query_text(instances)
    m = len(instances)
    text = (
        _role("rank the clicked documents by how useful they were to that user")
        + "\n\n"
        + _goal_block(task)
        + f"QUERY\n{_sanitize(query)}\n\n"
        + _aspect_block(guidelines)
        + "DOCUMENTS\n\n"
        + "".join(_doc_block(str(i), x, content_char_budget) for i, x in enumerate(instances, 1))
        + "OUTPUT\nFirst reason briefly, then give your answer as one JSON object: "
        '{"thought": "<your reasoning>", "ranking": "<ids from most to least useful, '
        'written like (a) > (b) > (c) with square brackets instead of parentheses>"}.'
    )
    return PromptSpec(
        mode=PromptMode.LISTWISE,
        query_id=instances[0].query_ref,
        rendered_text=text,
        valid_doc_ids=tuple(str(i) for i in range(1, m + 1)),
        doc_ids=tuple(x.doc_ref for x in instances),
        permutation=tuple(range(1, m + 1)),
    )


def build_segmentation_prompt(
    query_id: str, ranked_doc_ids: Sequence[str], scale: OrdinalScale
) -> PromptSpec:
    m = len(ranked_doc_ids)
    if m == 0:
        raise EmptyDocList("nothing to segment")
    order = " > ".join(f"[{i}]" for i in range(1, m + 1))
    text = (
        "You previously ranked the clicked documents of a search query by usefulness, "
        f"from most to least useful: {order}.\n\n"
        f"Split this ranking into {scale.n} usefulness levels, {scale.n} being the highest and 1 "
        "the lowest, without changing the order. Give your answer as one JSON object: "
        '{"thought": "<your reasoning>", "levels": [<level of each document, in ranking order>]}.'
    )
    return PromptSpec(
        mode=PromptMode.SEGMENTATION,
        query_id=query_id,
        rendered_text=text,
        valid_doc_ids=tuple(str(i) for i in range(1, m + 1)),
        doc_ids=tuple(ranked_doc_ids),
        permutation=tuple(range(1, m + 1)),
        scale_n=scale.n,
    )
