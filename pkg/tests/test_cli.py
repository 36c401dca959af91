import json

import pytest

from usejudge import cli
from usejudge.backend import ScriptedBackend, ScriptRule
from usejudge.errors import BackendExhausted


def _run(capsys, *argv):
    code = cli.run([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def corpus(tmp_path, capsys):
    d = tmp_path / "corpus"
    code, _, _ = _run(capsys, "synth", "--out", d, "--seed", 7, "--queries", 60)
    assert code == 0
    return d


def _summary(out):
    return json.loads(out.strip().splitlines()[-1])


def test_synth_is_byte_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        assert _run(capsys, "synth", "--out", tmp_path / name, "--seed", 7, "--queries", 200)[0] == 0
    for f in ("sessions.jsonl", "gold.jsonl"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_judge_oracle_then_agree(corpus, tmp_path, capsys):
    out = tmp_path / "run"
    code, o, _ = _run(capsys, "judge", "--sessions", corpus / "sessions.jsonl", "--gold", corpus / "gold.jsonl",
                      "--strategy", "cascade", "--voters", 5, "--scale", 4, "--backend", "scripted:oracle",
                      "--out", out)
    assert code == 0
    s = _summary(o)
    assert s["queries_judged"] == 60 and s["backend_calls"] > 0
    code, o, _ = _run(capsys, "agree", "--gold", corpus / "gold.jsonl", "--gold-source", "u_u",
                      "--pred", out / "labels.jsonl")
    rep = json.loads(o)
    assert code == 0 and rep["f1"] == 1.0 and rep["cohen_kappa"] == 1.0 and rep["mae"] == 0.0
    lines = (out / "labels.jsonl").read_text().splitlines()
    keys = [(json.loads(l)["query_id"], json.loads(l)["doc_id"]) for l in lines]
    assert keys == sorted(keys)
    assert len((out / "trace.jsonl").read_text().splitlines()) == 60


def test_even_voters_exit_2(corpus, tmp_path, capsys):
    code, _, err = _run(capsys, "judge", "--sessions", corpus / "sessions.jsonl", "--voters", 4,
                        "--out", tmp_path / "x")
    assert code == 2 and "voters must be odd" in err


def test_warm_cache_rerun(corpus, tmp_path, capsys):
    args = ["judge", "--sessions", corpus / "sessions.jsonl", "--gold", corpus / "gold.jsonl",
            "--out", tmp_path / "r", "--cache", tmp_path / "cache.jsonl"]
    _run(capsys, *args)
    first = (tmp_path / "r" / "labels.jsonl").read_bytes()
    code, o, _ = _run(capsys, *args)
    assert code == 0 and _summary(o)["backend_calls"] == 0 and _summary(o)["cache_hit_rate"] == 1.0
    assert (tmp_path / "r" / "labels.jsonl").read_bytes() == first


def test_config_file_with_flag_override(corpus, tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"sessions": str(corpus / "sessions.jsonl"), "gold": str(corpus / "gold.jsonl"),
                               "voters": 4, "strategy": "listwise"}))
    code, _, _ = _run(capsys, "judge", "--config", cfg, "--out", tmp_path / "a")
    assert code == 2
    code, o, _ = _run(capsys, "judge", "--config", cfg, "--voters", 3, "--out", tmp_path / "b")
    assert code == 0 and _summary(o)["strategy"] == "listwise"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert _run(capsys, "judge", "--config", cfg, "--out", tmp_path / "c")[0] == 2


@pytest.mark.parametrize("strategy", ["pointwise", "pairwise", "listwise", "relevance"])
def test_baseline_strategies_run(corpus, tmp_path, capsys, strategy):
    code, o, _ = _run(capsys, "judge", "--sessions", corpus / "sessions.jsonl", "--gold", corpus / "gold.jsonl",
                      "--strategy", strategy, "--out", tmp_path / strategy, "--workers", 3)
    assert code == 0
    src = "r_a" if strategy == "relevance" else "u_u"
    code, o, _ = _run(capsys, "agree", "--gold", corpus / "gold.jsonl", "--gold-source", src,
                      "--pred", tmp_path / strategy / "labels.jsonl")
    rep = json.loads(o)
    assert code == 0
    if strategy in ("pointwise", "relevance"):
        assert rep["f1"] == 1.0
    else:
        # levels come from block sizes along the ranking, so only the order must agree with gold
        assert rep["spearman_rho"] > 0
        gold = {}
        for l in (corpus / "gold.jsonl").read_text().splitlines():
            r = json.loads(l)
            if r["source"] == "user_usefulness":
                gold[(r["query_id"], r["doc_id"])] = r["value"]
        pred = [json.loads(l) for l in (tmp_path / strategy / "labels.jsonl").read_text().splitlines()]
        for a in pred:
            for b in pred:
                if a["query_id"] == b["query_id"] and gold[(a["query_id"], a["doc_id"])] > gold[(b["query_id"], b["doc_id"])]:
                    assert a["value"] >= b["value"]


class _FailAfter(ScriptRule):
    def __init__(self, inner, budget):
        self.inner, self.budget, self.name = inner, budget, "fail-after"

    def respond(self, prompt):
        if self.budget <= 0:
            raise BackendExhausted("simulated outage")
        self.budget -= 1
        return self.inner.respond(prompt)


def test_backend_exhaustion_then_resume(corpus, tmp_path, capsys, monkeypatch):
    gold_args = ["--sessions", corpus / "sessions.jsonl", "--gold", corpus / "gold.jsonl", "--voters", 3]
    _run(capsys, "judge", *gold_args, "--out", tmp_path / "clean")
    clean = (tmp_path / "clean" / "labels.jsonl").read_bytes()

    real = cli.make_backend
    made = []

    def flaky(cfg):
        b = real(cfg)
        wrapped = ScriptedBackend(_FailAfter(b.rules[0], 40), b.config)
        made.append(wrapped)
        return wrapped

    monkeypatch.setattr(cli, "make_backend", flaky)
    code, o, err = _run(capsys, "judge", *gold_args, "--out", tmp_path / "r")
    assert code == 3 and "exhausted" in err
    marker = json.loads((tmp_path / "r" / "resume.json").read_text())
    assert 0 < len(marker["completed"]) < 60
    assert (tmp_path / "r" / "labels.partial.jsonl").exists()

    monkeypatch.setattr(cli, "make_backend", real)
    counted = []

    def counting(cfg):
        b = real(cfg)
        counted.append(b)
        return b

    monkeypatch.setattr(cli, "make_backend", counting)
    code, o, _ = _run(capsys, "judge", *gold_args, "--out", tmp_path / "r")
    assert code == 0
    assert (tmp_path / "r" / "labels.jsonl").read_bytes() == clean
    assert not (tmp_path / "r" / "resume.json").exists()
    # successful calls from the failed run were cached, so no prompt is sent twice
    clean_calls = json.loads(_run(capsys, "judge", *gold_args, "--out", tmp_path / "fresh")[1])["backend_calls"]
    assert made[0].calls - 1 + counted[0].calls == clean_calls


def test_agree_disjoint_exit_4(tmp_path, capsys):
    (tmp_path / "g.jsonl").write_text('{"query_id":"q","doc_id":"a","source":"u_u","value":1,"scale_n":4}\n')
    (tmp_path / "p.jsonl").write_text('{"query_id":"q","doc_id":"b","source":"u_llm","value":1,"scale_n":4}\n')
    assert _run(capsys, "agree", "--gold", tmp_path / "g.jsonl", "--pred", tmp_path / "p.jsonl")[0] == 4


def test_agree_known_confusion(tmp_path, capsys):
    rows = lambda src, vals: "".join(
        json.dumps({"query_id": "q", "doc_id": str(i), "source": src, "value": v, "scale_n": 2}) + "\n"
        for i, v in enumerate(vals))
    (tmp_path / "g.jsonl").write_text(rows("u_u", [1, 1, 2, 2]))
    (tmp_path / "p.jsonl").write_text(rows("u_llm", [1, 2, 1, 2]))
    code, o, _ = _run(capsys, "agree", "--gold", tmp_path / "g.jsonl", "--pred", tmp_path / "p.jsonl",
                      "--out", tmp_path / "rep.json")
    rep = json.loads(o)
    assert code == 0 and rep["precision"] == rep["recall"] == rep["f1"] == 0.5 and rep["cohen_kappa"] == 0.0
    assert json.loads((tmp_path / "rep.json").read_text()) == rep


def test_metrics_dump(corpus, tmp_path, capsys):
    code, _, _ = _run(capsys, "metrics", "--sessions", corpus / "sessions.jsonl", "--labels", corpus / "gold.jsonl",
                      "--source", "u_u", "--cutoffs", "1,all", "--out", tmp_path / "m.jsonl")
    rows = [json.loads(l) for l in (tmp_path / "m.jsonl").read_text().splitlines()]
    assert code == 0 and len(rows) == 120
    assert {r["cutoff"] for r in rows} == {1, None}


def test_satisfaction_same_seed_same_bytes(tmp_path, capsys):
    _run(capsys, "synth", "--out", tmp_path / "c", "--seed", 3, "--queries", 500)
    args = ["satisfaction", "--sessions", tmp_path / "c" / "sessions.jsonl", "--labels", tmp_path / "c" / "gold.jsonl",
            "--variant", "behavior", "--variant", "u_u@all", "--seed", 5]
    code, a, _ = _run(capsys, *args, "--out", tmp_path / "a.json")
    code2, _, _ = _run(capsys, *args, "--out", tmp_path / "b.json")
    assert code == code2 == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    rep = json.loads(a)
    [t] = rep["tests"]
    assert rep["variants"]["+u_u@all"]["means"]["f1"] > rep["variants"]["only-behavior"]["means"]["f1"]
    assert t["p"] < 0.05


def test_satisfaction_single_class_exit_5(corpus, tmp_path, capsys):
    lines = []
    for line in (corpus / "sessions.jsonl").read_text().splitlines():
        obj = json.loads(line)
        for q in obj["queries"]:
            q["satisfaction"] = 1
        lines.append(json.dumps(obj))
    (tmp_path / "flat.jsonl").write_text("\n".join(lines) + "\n")
    assert _run(capsys, "satisfaction", "--sessions", tmp_path / "flat.jsonl")[0] == 5


def test_export_finetune(corpus, tmp_path, capsys):
    base = ["export-finetune", "--sessions", corpus / "sessions.jsonl", "--gold", corpus / "gold.jsonl",
            "--scale", 4, "--out", tmp_path / "ft"]
    code, o, _ = _run(capsys, *base, "--all-stages")
    assert code == 0
    assert sorted(p.name for p in (tmp_path / "ft").iterdir()) == [
        "finetune_stage2.jsonl", "finetune_stage3.jsonl", "finetune_stage4.jsonl"]
    rec = json.loads((tmp_path / "ft" / "finetune_stage4.jsonl").read_text().splitlines()[0])
    assert set(rec) == {"instruction", "input", "output"} and "thought" not in rec["output"]
    assert _run(capsys, *base, "--stage", 1)[0] == 2


def test_export_finetune_empty_gold(corpus, tmp_path, capsys):
    (tmp_path / "empty.jsonl").write_text("")
    code, _, _ = _run(capsys, "export-finetune", "--sessions", corpus / "sessions.jsonl",
                      "--gold", tmp_path / "empty.jsonl", "--all-stages", "--out", tmp_path / "ft")
    assert code == 6


def test_stats(corpus, capsys):
    code, o, _ = _run(capsys, "stats", "--sessions", corpus / "sessions.jsonl")
    s = json.loads(o)
    assert code == 0 and s["num_queries"] == 60 and s["duplicate_clicks_dropped"] == 0


def test_missing_input_file(tmp_path, capsys):
    assert _run(capsys, "stats", "--sessions", tmp_path / "nope.jsonl")[0] == 2


def test_http_backend_without_endpoint(corpus, tmp_path, capsys):
    code, _, err = _run(capsys, "judge", "--sessions", corpus / "sessions.jsonl", "--backend", "http",
                        "--out", tmp_path / "h")
    assert code == 2 and "endpoint" in err
