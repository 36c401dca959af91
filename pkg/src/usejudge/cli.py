"""usejudge command line.

Subcommands: judge, agree, metrics, satisfaction, export-finetune, synth, stats.
A JSON file given with ``--config`` supplies defaults; explicit flags override it.

Exit codes: 2 configuration or input error, 3 backend exhausted (partial output
and a resume marker are left in the output directory), 4 no overlapping labels,
5 single-class satisfaction target, 6 missing gold labels.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

from .agreement import align, metric_report
from .backend import (
    Adversarial,
    Backend,
    BackendConfig,
    BackendKind,
    HttpBackend,
    JudgeContext,
    Never,
    Oracle,
    ResponseCache,
    ScriptedBackend,
)
from .baselines import STRATEGIES, judge_query_baseline, judge_relevance_pointwise
from .cascade import CascadeConfig, check_voters, judge_query_cascade
from .core import LabelSource, UsefulnessLabel, make_scale, sort_labels
from .errors import (
    BackendExhausted,
    DegenerateTarget,
    EvenVoterCount,
    MissingGold,
    NoOverlap,
    UseJudgeError,
)
from .ingest import (
    IngestReport,
    build_instances,
    corpus_stats,
    dumps_labels,
    dumps_sessions,
    extract_behavior_vector,
    iter_queries,
    parse_labels,
    parse_sessions,
)
from .prompts import DEFAULT_GUIDELINES, GuidelineSet, export_finetune_set
from .satisfaction import (
    LabelFeatures,
    assemble_features,
    click_metrics,
    click_sequence,
    compare_feature_sets,
    rank_sequence,
)
from .synth import generate_corpus

log = logging.getLogger("usejudge")

EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_NO_OVERLAP = 4
EXIT_DEGENERATE = 5
EXIT_MISSING_GOLD = 6

RESUME_MARKER = "resume.json"
SCRIPTED_RULES = ("oracle", "threshold", "adversarial", "never", "mixed")


class ConfigError(UseJudgeError):
    pass


@dataclass
class RunConfig:
    sessions: str | None = None
    labels: list[str] = field(default_factory=list)
    gold: str | None = None
    gold_source: str | None = None
    cache: str | None = None
    out: str | None = None
    scale_n: int = 4
    strategy: str = "cascade"
    voters: int = 5
    backend: str = "scripted:oracle"
    backend_options: dict[str, Any] = field(default_factory=dict)
    guidelines: list[str] = field(default_factory=lambda: list(DEFAULT_GUIDELINES))
    cutoffs: list[int | None] = field(default_factory=lambda: [None])
    seed: int = 0
    workers: int = 1

    def check(self) -> "RunConfig":
        try:
            check_voters(self.voters)
        except EvenVoterCount as exc:
            raise ConfigError(str(exc)) from None
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {', '.join(STRATEGIES)}")
        if not 2 <= self.scale_n <= 10:
            raise ConfigError("scale must be between 2 and 10")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for p in [self.sessions, self.gold, *self.labels]:
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"input file not found: {p}")
        return self

    @property
    def guideline_set(self) -> GuidelineSet:
        return GuidelineSet(tuple(self.guidelines), "config")


def parse_cutoffs(text: str | Sequence) -> list[int | None]:
    items = text.split(",") if isinstance(text, str) else list(text)
    out: list[int | None] = []
    for item in items:
        item = str(item).strip()
        if item in ("all", "none", "None", ""):
            out.append(None)
        else:
            k = int(item)
            if k < 1:
                raise ConfigError(f"cutoff must be >= 1, got {k}")
            out.append(k)
    return out


def load_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the JSON config file, then any flag the user actually passed."""
    merged: dict[str, Any] = {}
    if getattr(args, "config", None):
        try:
            merged.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    known = {f.name for f in fields(RunConfig)}
    unknown = set(merged) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for name in known:
        val = getattr(args, name, None)
        if val is not None:
            merged[name] = val
    if isinstance(merged.get("labels"), str):
        merged["labels"] = [merged["labels"]]
    if "cutoffs" in merged:
        merged["cutoffs"] = parse_cutoffs(merged["cutoffs"])
    if isinstance(merged.get("guidelines"), str):
        merged["guidelines"] = [g.strip() for g in merged["guidelines"].split(",") if g.strip()]
    try:
        return RunConfig(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


# --------------------------------------------------------------------------- io helpers


def _read_sessions(path: str, report: IngestReport | None = None):
    with open(path, encoding="utf-8") as fh:
        return parse_sessions(fh, report)


def _read_labels(path: str, source: LabelSource | None = None) -> list[UsefulnessLabel]:
    with open(path, encoding="utf-8") as fh:
        return parse_labels(fh, source=source)


def _pick_source(labels: list[UsefulnessLabel], wanted: str | None, what: str) -> list[UsefulnessLabel]:
    if wanted is not None:
        src = LabelSource.parse(wanted)
        return [l for l in labels if l.source == src]
    sources = {l.source for l in labels}
    if len(sources) > 1:
        names = ", ".join(sorted(s.short for s in sources))
        raise ConfigError(f"{what} file holds several sources ({names}); choose one with a source flag")
    return labels


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _emit(obj: Any) -> None:
    print(json.dumps(obj, sort_keys=True))


# --------------------------------------------------------------------------- judge


def _default_gold_source(strategy: str) -> LabelSource:
    if strategy == "relevance":
        return LabelSource.THIRD_PARTY_RELEVANCE
    return LabelSource.USER_USEFULNESS


def make_backend(cfg: RunConfig) -> Backend:
    spec = cfg.backend
    opts = dict(cfg.backend_options)
    opts["max_concurrent_requests"] = cfg.workers
    if spec == "http":
        try:
            return HttpBackend(BackendConfig(kind=BackendKind.HTTP, **opts))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad backend options: {exc}") from None
    kind, _, rule = spec.partition(":")
    if kind != "scripted" or rule not in SCRIPTED_RULES:
        raise ConfigError(f"backend must be http or scripted:{{{'|'.join(SCRIPTED_RULES)}}}, got {spec!r}")
    if rule == "never":
        rules: list = [Never()]
    else:
        if cfg.gold is None:
            raise ConfigError(f"scripted:{rule} needs --gold")
        src = LabelSource.parse(cfg.gold_source) if cfg.gold_source else _default_gold_source(cfg.strategy)
        gold = {l.key: l.value for l in _read_labels(cfg.gold, src)}
        if not gold:
            raise MissingGold(f"no {src.short} labels in {cfg.gold}")
        oracle = Oracle(gold, threshold=(rule == "threshold"))
        if rule == "adversarial":
            rules = [Adversarial(oracle)]
        elif rule == "mixed":
            # a bare majority of honest voters, the rest contrarian
            honest = cfg.voters // 2 + 1
            rules = [oracle] * honest + [Adversarial(oracle)] * (cfg.voters - honest)
        else:
            rules = [oracle]
    model = "scripted:" + "+".join(r.name for r in rules)
    return ScriptedBackend(rules, BackendConfig(kind=BackendKind.SCRIPTED, model_name=model,
                                                max_concurrent_requests=cfg.workers))


def _judge_query(cfg, scale, ctx, session, query, voter_pool):
    qid = query.query_id
    if cfg.strategy == "relevance":
        labels = [judge_relevance_pointwise(qid, query.query_string_text, d, scale, ctx)
                  for d in sorted(query.results, key=lambda d: d.rank)]
        return labels, {"query_id": qid, "strategy": "relevance", "final": {l.doc_id: l.value for l in labels}}
    instances = build_instances(query, session)
    if not instances:
        return [], None
    if cfg.strategy == "cascade":
        cc = CascadeConfig(scale, cfg.voters, cfg.guideline_set, cfg.seed)
        labels, trace = judge_query_cascade(qid, instances, cc, ctx, voter_pool)
        return labels, trace.to_obj()
    labels = judge_query_baseline(cfg.strategy, qid, instances, scale, ctx, cfg.guideline_set)
    return labels, {"query_id": qid, "strategy": cfg.strategy,
                    "final": dict(sorted((l.doc_id, l.value) for l in labels))}


def _trace_lines(traces: list[dict]) -> str:
    traces = sorted(traces, key=lambda t: t["query_id"])
    return "".join(json.dumps(t, sort_keys=True) + "\n" for t in traces)


def cmd_judge(cfg: RunConfig) -> int:
    if cfg.sessions is None or cfg.out is None:
        raise ConfigError("judge needs --sessions and --out")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    scale = make_scale(cfg.scale_n)
    sessions = _read_sessions(cfg.sessions)
    backend = make_backend(cfg)
    cache_path = cfg.cache if cfg.cache is not None else str(out / "cache.jsonl")
    cache = ResponseCache(None if cache_path == "" else cache_path)
    ctx = JudgeContext(backend, cache)

    marker = out / RESUME_MARKER
    partial_labels: list[UsefulnessLabel] = []
    partial_traces: list[dict] = []
    done: set[str] = set()
    if marker.exists():
        state = json.loads(marker.read_text(encoding="utf-8"))
        if state.get("strategy") != cfg.strategy:
            raise ConfigError(f"resume marker was written for strategy {state.get('strategy')!r}")
        done = set(state["completed"])
        partial_labels = _read_labels(str(out / "labels.partial.jsonl"))
        lines = (out / "trace.partial.jsonl").read_text(encoding="utf-8").splitlines()
        partial_traces = [json.loads(l) for l in lines if l.strip()]
        log.info("resuming: %d queries already judged", len(done))

    work = [(s, q) for s, q in iter_queries(sessions) if q.query_id not in done]
    results: dict[str, tuple[list[UsefulnessLabel], dict | None]] = {}
    failure: BaseException | None = None
    if cfg.workers <= 1:
        for s, q in work:
            try:
                results[q.query_id] = _judge_query(cfg, scale, ctx, s, q, None)
            except BackendExhausted as exc:
                failure = exc
                break
    else:
        with ThreadPoolExecutor(cfg.workers) as voter_pool, ThreadPoolExecutor(cfg.workers) as query_pool:
            futures = {q.query_id: query_pool.submit(_judge_query, cfg, scale, ctx, s, q, voter_pool)
                       for s, q in work}
            for qid, fut in futures.items():
                try:
                    results[qid] = fut.result()
                except BackendExhausted as exc:
                    failure = failure or exc

    labels = partial_labels + [l for labs, _ in results.values() for l in labs]
    traces = partial_traces + [t for _, t in results.values() if t is not None]
    summary = {
        "command": "judge",
        "strategy": cfg.strategy,
        "queries_judged": len(done) + len(results),
        "labels": len(labels),
        "backend_calls": backend.calls,
        "cache_hits": cache.hits,
        "cache_misses": cache.misses,
        "cache_hit_rate": round(cache.hit_rate, 6),
        "anomalies": len(ctx.anomalies),
    }
    if failure is not None:
        _write(out / "labels.partial.jsonl", dumps_labels(sort_labels(labels), cfg.strategy))
        _write(out / "trace.partial.jsonl", _trace_lines(traces))
        _write(marker, json.dumps({"strategy": cfg.strategy,
                                   "completed": sorted(done | set(results))}, indent=2))
        summary["error"] = str(failure)
        summary["resume_marker"] = str(marker)
        _emit(summary)
        print(f"error: backend exhausted: {failure}", file=sys.stderr)
        return EXIT_BACKEND

    _write(out / "labels.jsonl", dumps_labels(sort_labels(labels), cfg.strategy))
    _write(out / "trace.jsonl", _trace_lines(traces))
    for name in (RESUME_MARKER, "labels.partial.jsonl", "trace.partial.jsonl"):
        (out / name).unlink(missing_ok=True)
    _emit(summary)
    return 0


# --------------------------------------------------------------------------- agree / metrics


def cmd_agree(args: argparse.Namespace) -> int:
    gold = _pick_source(_read_labels(args.gold), args.gold_source, "gold")
    pred = _pick_source(_read_labels(args.pred), args.pred_source, "pred")
    scales = {l.scale.n for l in gold + pred}
    n = args.scale or (scales.pop() if len(scales) == 1 else None)
    if n is None:
        raise ConfigError("gold and pred use different scales; pass --scale")
    report = metric_report(align(gold, pred), n).to_obj()
    text = json.dumps(report, sort_keys=True, indent=2)
    if args.out:
        _write(Path(args.out), text + "\n")
    print(text)
    return 0


def cmd_metrics(cfg: RunConfig, args: argparse.Namespace) -> int:
    if cfg.sessions is None or not cfg.labels:
        raise ConfigError("metrics needs --sessions and --labels")
    sessions = _read_sessions(cfg.sessions)
    labels = [l for p in cfg.labels for l in _read_labels(p)]
    labels = _pick_source(labels, args.source, "labels")
    lf = LabelFeatures(labels, cfg.cutoffs, gain=args.gain)
    per: dict[str, dict[str, int]] = {}
    for l in labels:
        per.setdefault(l.query_id, {})[l.doc_id] = l.value
    lines = []
    for _, q in iter_queries(sessions):
        seq = click_sequence(q) if lf.seq_mode() == "clicks" else rank_sequence(q)
        for k in cfg.cutoffs:
            vec = click_metrics(per.get(q.query_id, {}), seq, k, args.gain)
            row = {"query_id": q.query_id, "source": lf.source.short, "cutoff": k}
            row.update(zip(("ccg", "cdcg", "cmax", "ccg_per_click", "cdcg_per_click"), vec.as_list()))
            lines.append(json.dumps(row, sort_keys=True) + "\n")
    text = "".join(lines)
    if cfg.out:
        _write(Path(cfg.out), text)
    else:
        sys.stdout.write(text)
    return 0


# --------------------------------------------------------------------------- satisfaction


def parse_variant(spec: str, labels_by_source: dict[LabelSource, list[UsefulnessLabel]],
                  default_cutoffs: list[int | None]) -> tuple[str, list[LabelFeatures]]:
    """``behavior`` or ``name=src@k,k+src@k``; behavior features are always included."""
    name, eq, body = spec.partition("=")
    if not eq:
        name, body = spec, spec
    body = body.strip()
    if body in ("behavior", "only-behavior"):
        return (name if eq else "only-behavior"), []
    out = []
    for part in body.split("+"):
        part = part.strip()
        if part in ("", "behavior"):
            continue
        src_text, at, cut_text = part.partition("@")
        try:
            src = LabelSource.parse(src_text)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if src not in labels_by_source:
            raise ConfigError(f"variant {spec!r} needs {src.short} labels, none were given")
        cutoffs = parse_cutoffs(cut_text) if at else default_cutoffs
        out.append(LabelFeatures(labels_by_source[src], cutoffs))
    return (name if eq else "+" + body), out


def cmd_satisfaction(cfg: RunConfig, args: argparse.Namespace) -> int:
    if cfg.sessions is None:
        raise ConfigError("satisfaction needs --sessions")
    sessions = _read_sessions(cfg.sessions)
    by_source: dict[LabelSource, list[UsefulnessLabel]] = {}
    for p in cfg.labels:
        for l in _read_labels(p):
            by_source.setdefault(l.source, []).append(l)
    specs = args.variant or ["behavior"] + [s.short for s in sorted(by_source, key=lambda s: s.value)]
    behavior = {q.query_id: extract_behavior_vector(q, s) for s, q in iter_queries(sessions)}
    queries = [q for _, q in iter_queries(sessions)]
    variants = {}
    for spec in specs:
        name, lfs = parse_variant(spec, by_source, cfg.cutoffs)
        if name in variants:
            raise ConfigError(f"duplicate variant name {name!r}")
        variants[name] = assemble_features(queries, behavior, lfs)
    report = compare_feature_sets(variants, seed=cfg.seed, folds=args.folds)
    text = report.to_json()
    if cfg.out:
        _write(Path(cfg.out), text + "\n")
    print(text)
    return 0


# --------------------------------------------------------------------------- export / synth / stats


def cmd_export_finetune(cfg: RunConfig, args: argparse.Namespace) -> int:
    if cfg.sessions is None or cfg.gold is None or cfg.out is None:
        raise ConfigError("export-finetune needs --sessions, --gold and --out")
    scale = make_scale(cfg.scale_n)
    if args.all_stages:
        stages = list(range(scale.n, 1, -1))
    elif args.stage is None:
        raise ConfigError("give --stage k or --all-stages")
    elif not 2 <= args.stage <= scale.n:
        raise ConfigError(f"stage must be in 2..{scale.n}; no stage-1 selector exists")
    else:
        stages = [args.stage]
    src = LabelSource.parse(cfg.gold_source) if cfg.gold_source else LabelSource.USER_USEFULNESS
    gold = _read_labels(cfg.gold, src)
    if not gold:
        raise MissingGold(f"no {src.short} labels in {cfg.gold}")
    sessions = _read_sessions(cfg.sessions)
    instances = [x for s, q in iter_queries(sessions) for x in build_instances(q, s)]
    out = Path(cfg.out)
    written = {}
    for k in stages:
        recs = export_finetune_set(gold, instances, k, scale, cfg.guideline_set)
        path = out / f"finetune_stage{k}.jsonl"
        _write(path, "".join(json.dumps(r.to_obj(), ensure_ascii=False, sort_keys=True) + "\n" for r in recs))
        written[str(path)] = len(recs)
    _emit({"command": "export-finetune", "files": written})
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    corpus = generate_corpus(
        seed=args.seed if args.seed is not None else 0,
        num_queries=args.queries,
        clicks_per_query=args.clicks_per_query,
        scale_n=args.scale or 4,
        sat_levels=args.sat_levels,
        noise=args.noise,
    )
    out = Path(args.out)
    _write(out / "sessions.jsonl", dumps_sessions(corpus.sessions))
    _write(out / "gold.jsonl", dumps_labels(sort_labels(corpus.gold)))
    _emit({"command": "synth", **corpus_stats(corpus.sessions).to_dict()})
    return 0


def cmd_stats(cfg: RunConfig) -> int:
    if cfg.sessions is None:
        raise ConfigError("stats needs --sessions")
    report = IngestReport()
    sessions = _read_sessions(cfg.sessions, report)
    obj = corpus_stats(sessions).to_dict()
    obj["duplicate_clicks_dropped"] = report.duplicate_clicks_dropped
    _emit(obj)
    return 0


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="usejudge", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *names):
        sp.add_argument("--config", help="JSON run config; flags override its values")
        if "sessions" in names:
            sp.add_argument("--sessions", help="session JSONL")
        if "out" in names:
            sp.add_argument("--out", help="output path")
        if "scale" in names:
            sp.add_argument("--scale", dest="scale_n", type=int)
        if "seed" in names:
            sp.add_argument("--seed", type=int)

    j = sub.add_parser("judge", help="label clicked documents")
    common(j, "sessions", "out", "scale", "seed")
    j.add_argument("--strategy", choices=STRATEGIES)
    j.add_argument("--voters", type=int)
    j.add_argument("--backend", help="http or scripted:{" + "|".join(SCRIPTED_RULES) + "}")
    j.add_argument("--gold", help="gold labels for scripted oracle rules")
    j.add_argument("--gold-source")
    j.add_argument("--cache", help="response cache JSONL (default OUT/cache.jsonl; empty string disables)")
    j.add_argument("--workers", type=int)
    j.add_argument("--guidelines", help="comma-separated adjectives")

    a = sub.add_parser("agree", help="agreement between two label files")
    a.add_argument("--gold", required=True)
    a.add_argument("--pred", required=True)
    a.add_argument("--gold-source")
    a.add_argument("--pred-source")
    a.add_argument("--scale", type=int)
    a.add_argument("--out")

    m = sub.add_parser("metrics", help="click-sequence metrics per query")
    common(m, "sessions", "out")
    m.add_argument("--labels", action="append")
    m.add_argument("--source")
    m.add_argument("--cutoffs", help="comma list, 'all' for no cutoff")
    m.add_argument("--gain", choices=("linear", "exp"), default="linear")

    s = sub.add_parser("satisfaction", help="compare satisfaction predictors")
    common(s, "sessions", "out", "seed")
    s.add_argument("--labels", action="append")
    s.add_argument("--variant", action="append",
                   help="'behavior' or [name=]src@k,k[+src@k]; repeatable")
    s.add_argument("--cutoffs")
    s.add_argument("--folds", type=int, default=5)

    e = sub.add_parser("export-finetune", help="fine-tuning records per cascade stage")
    common(e, "sessions", "out", "scale")
    e.add_argument("--gold")
    e.add_argument("--gold-source")
    e.add_argument("--stage", type=int)
    e.add_argument("--all-stages", action="store_true")
    e.add_argument("--guidelines")

    y = sub.add_parser("synth", help="generate a synthetic corpus with gold labels")
    y.add_argument("--out", required=True)
    y.add_argument("--seed", type=int)
    y.add_argument("--queries", type=int, default=200)
    y.add_argument("--clicks-per-query", type=float, default=1.6)
    y.add_argument("--scale", type=int)
    y.add_argument("--sat-levels", type=int, default=5)
    y.add_argument("--noise", type=float, default=0.5)

    t = sub.add_parser("stats", help="corpus statistics")
    common(t, "sessions")
    return p


def run(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "agree":
            return cmd_agree(args)
        if args.command == "synth":
            return cmd_synth(args)
        cfg = load_config(args).check()
        if args.command == "judge":
            return cmd_judge(cfg)
        if args.command == "metrics":
            return cmd_metrics(cfg, args)
        if args.command == "satisfaction":
            return cmd_satisfaction(cfg, args)
        if args.command == "export-finetune":
            return cmd_export_finetune(cfg, args)
        return cmd_stats(cfg)
    except NoOverlap as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_OVERLAP
    except DegenerateTarget as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except MissingGold as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_GOLD
    except BackendExhausted as exc:
        print(f"error: backend exhausted: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (UseJudgeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
