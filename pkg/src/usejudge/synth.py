"""Seeded synthetic search logs with gold usefulness, gold relevance and satisfaction.

Each query gets ten results and at least one click. Gold usefulness of clicked
documents is uniform over the scale; dwell time grows only weakly with it.
Satisfaction is the click-sequence cDCG of the gold labels plus Gaussian noise,
cut into levels at quantiles of the noiseless cDCG, so with ``noise=0`` it is
exactly the bucketized cDCG.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np

from .core import (
    ClickEvent,
    DocRecord,
    LabelSource,
    QueryRecord,
    SearchSession,
    UsefulnessLabel,
    make_scale,
)
from .satisfaction import click_metrics, sub_seed

_WORDS = (
    "travel visa museum ticket recipe history climate battery insurance river mountain "
    "festival library vaccine mortgage telescope garden football election algorithm harbor "
    "castle bridge vitamin painting engine volcano market opera satellite forest"
).split()

EPOCH = datetime(2024, 7, 1, 9, 0, 0, tzinfo=timezone.utc)


@dataclass
class SynthCorpus:
    sessions: list[SearchSession]
    usefulness: list[UsefulnessLabel]
    relevance: list[UsefulnessLabel]
    thresholds: np.ndarray
    cdcg: dict[str, float]

    @property
    def gold(self) -> list[UsefulnessLabel]:
        return self.usefulness + self.relevance

    def usefulness_map(self) -> dict[tuple[str, str], int]:
        return {l.key: l.value for l in self.usefulness}

    def relevance_map(self) -> dict[tuple[str, str], int]:
        return {l.key: l.value for l in self.relevance}

    @property
    def queries(self) -> list[QueryRecord]:
        return [q for s in self.sessions for q in s.queries]


def bucketize(values: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Level 1 + number of thresholds strictly below each value."""
    return 1 + np.searchsorted(thresholds, values, side="left")


def _text(rng: np.random.Generator, n_words: int) -> str:
    return " ".join(_WORDS[i] for i in rng.integers(0, len(_WORDS), n_words))


def generate_corpus(
    seed: int = 0,
    num_queries: int = 200,
    clicks_per_query: float = 1.6,
    scale_n: int = 4,
    sat_levels: int = 5,
    noise: float = 0.5,
    max_queries_per_session: int = 4,
    results_per_query: int = 10,
    num_users: int = 25,
    num_tasks: int = 9,
    dwell_signal: float = 0.15,
) -> SynthCorpus:
    if clicks_per_query < 1.0:
        raise ValueError("every synthetic query has at least one click; clicks_per_query must be >= 1")
    rng = np.random.default_rng(sub_seed(seed, "synth"))
    scale = make_scale(scale_n)
    tasks = [(f"Background for task {t}: {_text(rng, 12)}.", f"Find out about {_text(rng, 4)}.")
             for t in range(num_tasks)]

    # session sizes first, so the total hits num_queries exactly
    sizes = []
    left = num_queries
    while left > 0:
        s = int(min(left, rng.integers(1, max_queries_per_session + 1)))
        sizes.append(s)
        left -= s

    plans = []
    qn = 0
    for si, size in enumerate(sizes):
        qs = []
        for _ in range(size):
            qn += 1
            m = int(min(results_per_query, 1 + rng.poisson(clicks_per_query - 1.0)))
            weights = 1.0 / np.arange(1, results_per_query + 1)
            ranks = np.sort(rng.choice(results_per_query, size=m, replace=False, p=weights / weights.sum()) + 1)
            useful = rng.integers(1, scale_n + 1, size=m)
            qs.append((f"q{qn:06d}", ranks, useful))
        plans.append((si, qs))

    # thresholds from the noiseless cDCG of the gold labels
    cdcg = {}
    for _, qs in plans:
        for qid, ranks, useful in qs:
            seq = [str(r) for r in ranks]
            cdcg[qid] = click_metrics(dict(zip(seq, (int(u) for u in useful))), seq).cDCG
    raw = np.array(list(cdcg.values()))
    thresholds = np.quantile(raw, np.arange(1, sat_levels) / sat_levels)

    sessions: list[SearchSession] = []
    usefulness: list[UsefulnessLabel] = []
    relevance: list[UsefulnessLabel] = []
    t = EPOCH
    for si, qs in plans:
        user = f"u{int(rng.integers(num_users)):03d}"
        bg, goal = tasks[int(rng.integers(num_tasks))]
        t = t + timedelta(minutes=float(rng.integers(5, 120)))
        queries = []
        for qi, (qid, ranks, useful) in enumerate(qs):
            issue = t
            docs = []
            clicked = dict(zip((int(r) for r in ranks), (int(u) for u in useful)))
            for r in range(1, results_per_query + 1):
                did = f"{qid}-d{r:02d}"
                docs.append(DocRecord(did, r, f"https://example.org/{did}", _text(rng, 4).title(), _text(rng, 30)))
                if r in clicked:
                    rel = int(np.clip(clicked[r] + rng.integers(-1, 2), 1, scale_n))
                else:
                    rel = int(rng.integers(1, scale_n + 1))
                relevance.append(UsefulnessLabel(qid, did, LabelSource.THIRD_PARTY_RELEVANCE, rel, scale))
            clicks = []
            ct = issue + timedelta(seconds=float(rng.uniform(2, 15)))
            for order, (r, u) in enumerate(clicked.items(), start=1):
                dwell = float(np.round(np.exp(rng.normal(2.8 + dwell_signal * (u - 1), 0.8)), 1))
                clicks.append(ClickEvent(f"{qid}-d{r:02d}", order, ct, dwell, False))
                usefulness.append(UsefulnessLabel(qid, f"{qid}-d{r:02d}", LabelSource.USER_USEFULNESS, u, scale))
                ct = ct + timedelta(seconds=dwell + float(rng.uniform(1, 10)))
            if qi == len(qs) - 1:
                last = clicks[-1]
                clicks[-1] = ClickEvent(last.doc_id, last.click_order, last.click_time, last.dwell_time_seconds, True)
            score = cdcg[qid] + (noise * rng.normal() if noise > 0 else 0.0)
            sat = int(bucketize(np.array([score]), thresholds)[0])
            queries.append(
                QueryRecord(qid, _text(rng, int(rng.integers(1, 4))), issue, tuple(docs), tuple(clicks),
                            sat, sat_levels)
            )
            t = ct + timedelta(seconds=float(rng.uniform(5, 60)))
        sessions.append(SearchSession(f"s{si + 1:05d}", user, bg, goal, tuple(queries)))
    return SynthCorpus(sessions, usefulness, relevance, thresholds, cdcg)
