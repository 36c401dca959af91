"""Judge backends, reply parsing, and the persistent response cache.

Two backends share one interface, ``complete(prompt) -> str``:

* ``HttpBackend`` posts ``{"model", "temperature", "messages"}`` to a chat-completion
  endpoint and reads ``choices[0].message.content``.
* ``ScriptedBackend`` answers from a deterministic rule (oracle, threshold,
  adversarial, fixed replies, predicate); it is the test double for the LLM.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .core import OrdinalScale, make_scale
from .errors import (
    AuthError,
    BackendExhausted,
    BackendTimeout,
    CacheIo,
    MissingGold,
    Unparseable,
)
from .prompts import PromptMode, PromptSpec

log = logging.getLogger(__name__)


class BackendKind(str, enum.Enum):
    HTTP = "http"
    SCRIPTED = "scripted"


@dataclass(frozen=True)
class BackendConfig:
    kind: BackendKind = BackendKind.SCRIPTED
    model_name: str = "scripted"
    temperature: float = 0.0
    max_retries: int = 3
    timeout_s: float = 60.0
    max_concurrent_requests: int = 4
    endpoint_url: str = ""
    api_key_env: str = "OPENAI_API_KEY"
    backoff_base_s: float = 1.0
    backoff_factor: float = 2.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_concurrent_requests < 1:
            raise ValueError("max_concurrent_requests must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.kind == BackendKind.HTTP and not self.endpoint_url:
            raise ValueError("http backend needs endpoint_url")


# --------------------------------------------------------------------------- parsing


@dataclass(frozen=True)
class ParsedSelection:
    thought: str
    selected_ids: tuple[str, ...]
    raw_text: str
    dropped_ids: tuple[str, ...] = ()
    lenient: bool = False


def _objects_from_end(raw: str):
    """Yield JSON objects embedded in ``raw``, scanning start positions from the end."""
    dec = json.JSONDecoder()
    pos = raw.rfind("{")
    while pos != -1:
        try:
            obj, _ = dec.raw_decode(raw, pos)
        except json.JSONDecodeError:
            pass
        else:
            if isinstance(obj, dict):
                yield obj
        pos = raw.rfind("{", 0, pos)


def _clean_id(tok) -> str:
    return str(tok).strip().strip("\"'").strip("[]()").strip()


def _filter_ids(tokens, valid_ids: Sequence[str]) -> tuple[tuple[str, ...], tuple[str, ...]]:
    valid = set(valid_ids)
    kept: list[str] = []
    dropped: list[str] = []
    for t in tokens:
        tid = _clean_id(t)
        if not tid:
            continue
        if tid in valid:
            if tid not in kept:
                kept.append(tid)
        else:
            dropped.append(tid)
    if dropped:
        log.warning("dropped ids not offered in the prompt: %s", dropped)
    return tuple(kept), tuple(dropped)


_BRACKET_GROUP = re.compile(r"\[([^\[\]]*)\]")


def parse_selection(raw: str, valid_ids: Sequence[str]) -> ParsedSelection:
    for obj in _objects_from_end(raw):
        sel = obj.get("selected")
        if isinstance(sel, list) and all(isinstance(t, (str, int)) and not isinstance(t, bool) for t in sel):
            kept, dropped = _filter_ids(sel, valid_ids)
            thought = obj.get("thought", "")
            return ParsedSelection(str(thought) if thought is not None else "", kept, raw, dropped)

    at = raw.lower().rfind("selected")
    if at == -1:
        raise Unparseable("reply has neither a selection object nor a 'selected' marker", raw)
    groups = _BRACKET_GROUP.findall(raw[at:])
    if not groups:
        raise Unparseable("no bracketed ids after 'selected'", raw)
    tokens = [t for g in groups for t in g.split(",")]
    kept, dropped = _filter_ids(tokens, valid_ids)
    return ParsedSelection(raw[:at].strip(), kept, raw, dropped, lenient=True)


@dataclass(frozen=True)
class ParsedScore:
    value: int
    raw_value: int
    clamped: bool
    thought: str = ""


_INT = re.compile(r"-?\d+")


def parse_score(raw: str, scale: OrdinalScale, raw_min: int = 1) -> ParsedScore:
    """Integer grade from a reply, clamped into range and shifted onto 1..n."""
    found: int | None = None
    thought = ""
    for obj in _objects_from_end(raw):
        s = obj.get("score")
        if isinstance(s, str) and _INT.fullmatch(s.strip()):
            s = int(s.strip())
        if isinstance(s, (int, float)) and not isinstance(s, bool):
            found = int(s)
            thought = str(obj.get("thought", "") or "")
            break
    if found is None:
        text = raw.strip()
        at = text.lower().rfind("score")
        tail = text[at:] if at != -1 else text
        nums = _INT.findall(tail)
        if at != -1 and nums:
            found = int(nums[0])
        elif _INT.fullmatch(text):
            found = int(text)
        else:
            raise Unparseable("no integer grade in reply", raw)
    hi = raw_min + scale.n - 1
    clamped = min(max(found, raw_min), hi)
    if clamped != found:
        log.warning("grade %d outside %d..%d, clamped to %d", found, raw_min, hi, clamped)
    return ParsedScore(clamped - raw_min + 1, found, clamped != found, thought)


def parse_ranking(raw: str, valid_ids: Sequence[str]) -> tuple[list[str], list[str]]:
    """Ordered bracketed ids from a listwise reply; returns ``(ranked, missing)``."""
    text = raw
    for obj in _objects_from_end(raw):
        if isinstance(obj.get("ranking"), str):
            text = obj["ranking"]
            break
    else:
        at = raw.lower().rfind("ranking")
        if at != -1 and _BRACKET_GROUP.search(raw[at:]):
            text = raw[at:]
    tokens = _BRACKET_GROUP.findall(text)
    kept, _ = _filter_ids(tokens, valid_ids)
    if not kept:
        raise Unparseable("no valid document ids in ranking", raw)
    missing = [t for t in valid_ids if t not in kept]
    return list(kept), missing


def parse_levels(raw: str, m: int, scale: OrdinalScale) -> list[int]:
    for obj in _objects_from_end(raw):
        lv = obj.get("levels")
        if isinstance(lv, list) and len(lv) == m and all(isinstance(v, int) and not isinstance(v, bool) for v in lv):
            return [min(max(v, 1), scale.n) for v in lv]
    raise Unparseable(f"expected a 'levels' list of {m} integers", raw)


# --------------------------------------------------------------------------- scripted rules


def _reply(selected: Sequence[str], thought: str = "") -> str:
    return json.dumps({"thought": thought, "selected": list(selected)})


def _score_reply(value: int, prompt: PromptSpec) -> str:
    return json.dumps({"thought": "", "score": value + prompt.raw_min - 1})


class ScriptRule:
    """Maps a prompt to reply text. Subclasses implement ``respond``."""

    name = "rule"

    def respond(self, prompt: PromptSpec) -> str:
        raise NotImplementedError


class Oracle(ScriptRule):
    """Answers from gold values keyed by ``(query_id, doc_id)``.

    Cascade stage k selects docs whose gold equals k (``threshold=False``) or is
    at least k (``threshold=True``).
    """

    name = "oracle"

    def __init__(self, gold: Mapping[tuple[str, str], int], threshold: bool = False):
        self.gold = dict(gold)
        self.threshold = threshold
        if threshold:
            self.name = "threshold"

    def value(self, prompt: PromptSpec, doc_id: str) -> int:
        try:
            return self.gold[(prompt.query_id, doc_id)]
        except KeyError:
            raise MissingGold(f"oracle has no gold for ({prompt.query_id}, {doc_id})") from None

    def respond(self, prompt: PromptSpec) -> str:
        vals = [self.value(prompt, d) for d in prompt.doc_ids]
        tags = prompt.valid_doc_ids
        mode = prompt.mode
        if mode == PromptMode.USEFULNESS_CASCADE:
            k = prompt.stage_k
            hit = (lambda v: v >= k) if self.threshold else (lambda v: v == k)
            return _reply([t for t, v in zip(tags, vals) if hit(v)], f"gold match at C{k}")
        if mode in (PromptMode.POINTWISE_USEFULNESS, PromptMode.RELEVANCE_POINTWISE):
            return _score_reply(vals[0], prompt)
        if mode == PromptMode.PAIRWISE:
            return _reply([tags[0] if vals[0] >= vals[1] else tags[1]])
        if mode == PromptMode.LISTWISE:
            order = sorted(range(len(tags)), key=lambda i: -vals[i])
            return json.dumps({"thought": "", "ranking": " > ".join(f"[{tags[i]}]" for i in order)})
        if mode == PromptMode.SEGMENTATION:
            levels, low = [], prompt.scale_n
            for v in vals:
                low = min(low, v)
                levels.append(low)
            return json.dumps({"thought": "", "levels": levels})
        raise ValueError(f"oracle cannot answer mode {mode}")


class Adversarial(ScriptRule):
    """Inverts a wrapped rule: complement selection, mirrored grade, reversed ranking."""

    def __init__(self, inner: ScriptRule):
        self.inner = inner
        self.name = f"adversarial({inner.name})"

    def respond(self, prompt: PromptSpec) -> str:
        raw = self.inner.respond(prompt)
        mode = prompt.mode
        if mode in (PromptMode.USEFULNESS_CASCADE, PromptMode.PAIRWISE):
            chosen = set(parse_selection(raw, prompt.valid_doc_ids).selected_ids)
            return _reply([t for t in prompt.valid_doc_ids if t not in chosen], "contrarian")
        if mode in (PromptMode.POINTWISE_USEFULNESS, PromptMode.RELEVANCE_POINTWISE):
            scale_n = prompt.scale_n
            v = parse_score(raw, make_scale(scale_n), prompt.raw_min).value
            return _score_reply(scale_n + 1 - v, prompt)
        if mode == PromptMode.LISTWISE:
            ranked, _ = parse_ranking(raw, prompt.valid_doc_ids)
            return json.dumps({"thought": "", "ranking": " > ".join(f"[{t}]" for t in reversed(ranked))})
        return raw


class Never(ScriptRule):
    """Selects nothing and grades everything at the bottom of the scale."""

    name = "never"

    def respond(self, prompt: PromptSpec) -> str:
        if prompt.mode in (PromptMode.POINTWISE_USEFULNESS, PromptMode.RELEVANCE_POINTWISE):
            return _score_reply(1, prompt)
        if prompt.mode == PromptMode.LISTWISE:
            return json.dumps({"ranking": " > ".join(f"[{t}]" for t in prompt.valid_doc_ids)})
        if prompt.mode == PromptMode.SEGMENTATION:
            return json.dumps({"levels": [1] * len(prompt.valid_doc_ids)})
        return _reply([], "nothing qualifies")


class Fixed(ScriptRule):
    """Canned replies keyed by prompt digest, with an optional default."""

    name = "fixed"

    def __init__(self, replies: Mapping[str, str], default: str | None = None):
        self.replies = dict(replies)
        self.default = default

    def respond(self, prompt: PromptSpec) -> str:
        if prompt.digest in self.replies:
            return self.replies[prompt.digest]
        if self.default is None:
            raise KeyError(f"no fixed reply for prompt {prompt.digest[:12]}")
        return self.default


class Predicate(ScriptRule):
    """Cascade selection by ``fn(prompt, doc_id) -> bool``; other modes via a function of the prompt."""

    name = "predicate"

    def __init__(self, fn: Callable[[PromptSpec, str], bool], name: str = "predicate"):
        self.fn = fn
        self.name = name

    def respond(self, prompt: PromptSpec) -> str:
        return _reply([t for t, d in zip(prompt.valid_doc_ids, prompt.doc_ids) if self.fn(prompt, d)])


class ReplyQueue(ScriptRule):
    """Replies popped in order (for re-ask and malformed-reply tests); repeats the last one."""

    name = "sequence"

    def __init__(self, replies: Sequence[str]):
        self.replies = list(replies)
        self._i = 0
        self._lock = threading.Lock()

    def respond(self, prompt: PromptSpec) -> str:
        with self._lock:
            r = self.replies[min(self._i, len(self.replies) - 1)]
            self._i += 1
        return r


# --------------------------------------------------------------------------- backends


class Backend:
    config: BackendConfig

    def __init__(self, config: BackendConfig):
        self.config = config
        self.calls = 0
        self._count_lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(config.max_concurrent_requests)

    def _count(self) -> None:
        with self._count_lock:
            self.calls += 1

    def cache_tag(self, prompt: PromptSpec) -> str:
        """Extra cache-key component; empty when the reply depends on the prompt text alone."""
        return ""

    def complete(self, prompt: PromptSpec) -> str:
        raise NotImplementedError


class ScriptedBackend(Backend):
    """Deterministic backend. ``rules`` may be one rule or one rule per voter (cycled)."""

    def __init__(self, rules: ScriptRule | Sequence[ScriptRule], config: BackendConfig | None = None):
        self.rules = [rules] if isinstance(rules, ScriptRule) else list(rules)
        if not self.rules:
            raise ValueError("scripted backend needs at least one rule")
        if config is None:
            config = BackendConfig(
                kind=BackendKind.SCRIPTED,
                model_name="scripted:" + "+".join(r.name for r in self.rules),
            )
        super().__init__(config)

    def _rule(self, prompt: PromptSpec) -> ScriptRule:
        return self.rules[(prompt.voter_j - 1) % len(self.rules)]

    def cache_tag(self, prompt: PromptSpec) -> str:
        if len(self.rules) == 1:
            return ""
        return f"voter-rule-{(prompt.voter_j - 1) % len(self.rules)}"

    def complete(self, prompt: PromptSpec) -> str:
        with self._slots:
            self._count()
            return self._rule(prompt).respond(prompt)


def _is_transient(code: int) -> bool:
    return code == 429 or code >= 500


class HttpBackend(Backend):
    def __init__(self, config: BackendConfig, sleep: Callable[[float], None] = time.sleep):
        super().__init__(config)
        self._sleep = sleep

    def _request(self, prompt: PromptSpec, key: str) -> str:
        body = json.dumps(
            {
                "model": self.config.model_name,
                "temperature": self.config.temperature,
                "messages": [{"role": "user", "content": prompt.rendered_text}],
            }
        ).encode("utf-8")
        req = urllib.request.Request(
            self.config.endpoint_url,
            data=body,
            headers={"Content-Type": "application/json", "Authorization": f"Bearer {key}"},
            method="POST",
        )
        with urllib.request.urlopen(req, timeout=self.config.timeout_s) as resp:
            payload = json.loads(resp.read().decode("utf-8"))
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise Unparseable("chat reply lacks choices[0].message.content", json.dumps(payload)) from exc

    def complete(self, prompt: PromptSpec) -> str:
        key = os.environ.get(self.config.api_key_env)
        if not key:
            raise AuthError(f"environment variable {self.config.api_key_env} is not set")
        attempts = self.config.max_retries + 1
        timeouts = 0
        last: Exception | None = None
        for attempt in range(attempts):
            if attempt:
                self._sleep(self.config.backoff_base_s * self.config.backoff_factor ** (attempt - 1))
            with self._slots:
                self._count()
                try:
                    return self._request(prompt, key)
                except urllib.error.HTTPError as exc:
                    if exc.code in (401, 403):
                        raise AuthError(f"endpoint refused credentials ({exc.code})") from exc
                    if not _is_transient(exc.code):
                        raise BackendExhausted(f"endpoint returned {exc.code}") from exc
                    last = exc
                except (TimeoutError, OSError) as exc:
                    reason = getattr(exc, "reason", exc)
                    if isinstance(reason, TimeoutError) or isinstance(exc, TimeoutError):
                        timeouts += 1
                    last = exc
            log.warning("backend attempt %d/%d failed: %s", attempt + 1, attempts, last)
        if timeouts == attempts:
            raise BackendTimeout(f"all {attempts} attempts timed out")
        raise BackendExhausted(f"gave up after {attempts} attempts: {last}")


# --------------------------------------------------------------------------- cache


def cache_key(config: BackendConfig, prompt: PromptSpec, tag: str = "") -> str:
    canon = json.dumps(
        [config.kind.value, config.model_name, float(config.temperature), tag, prompt.rendered_text],
        ensure_ascii=False,
    )
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


class ResponseCache:
    """Append-only JSONL store of ``{"key", "reply"}``; in memory when ``path`` is None."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._data: dict[str, str] = {}
        self._write_lock = threading.Lock()
        self._key_locks: dict[str, threading.Lock] = {}
        self._locks_lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    key, reply = obj["key"], obj["reply"]
                    if not isinstance(key, str) or not isinstance(reply, str):
                        raise TypeError("key and reply must be strings")
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    m = re.search(r'"key"\s*:\s*"([0-9a-f]+)', line)
                    raise CacheIo(
                        f"{self.path}:{lineno}: corrupted cache line ({exc})", m.group(1) if m else None
                    ) from exc
                self._data[key] = reply

    def __len__(self) -> int:
        return len(self._data)

    def get(self, key: str) -> str | None:
        return self._data.get(key)

    def put(self, key: str, reply: str) -> None:
        with self._write_lock:
            if key in self._data:
                return
            self._data[key] = reply
            if self.path is not None:
                try:
                    with open(self.path, "a", encoding="utf-8") as fh:
                        fh.write(json.dumps({"key": key, "reply": reply}, ensure_ascii=False) + "\n")
                except OSError as exc:
                    raise CacheIo(f"cannot append to {self.path}: {exc}", key) from exc

    def key_lock(self, key: str) -> threading.Lock:
        with self._locks_lock:
            return self._key_locks.setdefault(key, threading.Lock())

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0


def cached_complete(prompt: PromptSpec, backend: Backend, cache: ResponseCache | None) -> str:
    if cache is None:
        return backend.complete(prompt)
    key = cache_key(backend.config, prompt, backend.cache_tag(prompt))
    # one in-flight request per key: concurrent identical prompts share a reply
    with cache.key_lock(key):
        hit = cache.get(key)
        if hit is not None:
            with cache._write_lock:
                cache.hits += 1
            return hit
        reply = backend.complete(prompt)
        cache.put(key, reply)
        with cache._write_lock:
            cache.misses += 1
        return reply


def complete(prompt: PromptSpec, backend: Backend) -> str:
    return backend.complete(prompt)


@dataclass
class Anomaly:
    query_id: str
    mode: str
    detail: str


@dataclass
class JudgeContext:
    """Backend plus optional cache, with the re-ask policy for malformed replies."""

    backend: Backend
    cache: ResponseCache | None = None
    anomalies: list[Anomaly] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def ask(self, prompt: PromptSpec) -> str:
        return cached_complete(prompt, self.backend, self.cache)

    def note(self, prompt: PromptSpec, detail: str) -> None:
        log.warning("query %s (%s): %s", prompt.query_id, prompt.mode.value, detail)
        with self._lock:
            self.anomalies.append(Anomaly(prompt.query_id, prompt.mode.value, detail))

    def ask_parsed(self, prompt: PromptSpec, parse: Callable[[str], object]):
        """Ask, parse, and re-ask once on an unparseable reply; a second failure propagates."""
        raw = self.ask(prompt)
        try:
            return parse(raw)
        except Unparseable:
            self.note(prompt, "unparseable reply, re-asking")
        return parse(self.ask(prompt.reask()))

    def select(self, prompt: PromptSpec) -> ParsedSelection:
        """Selection reply; still unparseable after one re-ask counts as an empty selection."""
        try:
            return self.ask_parsed(prompt, lambda r: parse_selection(r, prompt.valid_doc_ids))
        except Unparseable as exc:
            self.note(prompt, "unparseable after re-ask, treated as empty selection")
            return ParsedSelection("", (), exc.raw)


__all__ = [
    "Adversarial",
    "Backend",
    "BackendConfig",
    "BackendKind",
    "Fixed",
    "HttpBackend",
    "JudgeContext",
    "Never",
    "Oracle",
    "ParsedScore",
    "ParsedSelection",
    "Predicate",
    "ResponseCache",
    "ScriptRule",
    "ScriptedBackend",
    "ReplyQueue",
    "cache_key",
    "cached_complete",
    "complete",
    "parse_levels",
    "parse_ranking",
    "parse_score",
    "parse_selection",
]
