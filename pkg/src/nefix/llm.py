"""Text-generation backends: one remote chat-completions client and three
deterministic local stand-ins (oracle, scripted replay, heuristic).

Every call carries a task context describing what is being asked (an MCQ
selection, a correction, or a rationale).  Remote backends ignore it apart
from logging; local backends answer from it.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol, Sequence

import httpx

from .tagging import EntitySpan, replace_span

ROLES = ("system", "user", "assistant")
FALLBACK_RATIONALE = "fallback: highest phonetic score"
DEFAULT_KEY_ENV = "NEFIX_API_KEY"


class BackendError(RuntimeError):
    """Base for every failure a backend can report."""


class TransportError(BackendError):
    """Network-level failure or retryable status that exhausted its attempts."""


class AuthError(BackendError):
    """401/403 from the remote service; never retried."""


class HttpStatusError(BackendError):
    def __init__(self, status: int, body: str):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status


class MalformedResponseError(BackendError):
    pass


class ScriptMissingError(BackendError):
    def __init__(self, key: str):
        super().__init__(f"no scripted reply for key {key!r}")
        self.key = key


# --------------------------------------------------------------------------
# requests and task contexts


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown message role {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[Message, ...]
    temperature: float = 0.0
    max_tokens: int = 512

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not any(m.role == "user" for m in self.messages):
            raise ValueError("chat request needs at least one user message")
        if self.temperature < 0:
            raise ValueError("temperature must be nonnegative")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    @classmethod
    def user(cls, prompt: str, temperature: float = 0.0, max_tokens: int = 512) -> "ChatRequest":
        return cls((Message("user", prompt),), temperature, max_tokens)

    def to_json(self, model: str) -> dict[str, Any]:
        return {
            "model": model,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


@dataclass(frozen=True)
class McqTask:
    """Pick one option for [BLANK].  ``mcq`` exposes ``options`` as
    ``(letter, Candidate)`` pairs and an optional ``gold_letter``."""

    key: str
    mcq: Any


@dataclass(frozen=True)
class GecTask:
    """Produce a corrected transcript.

    ``text`` is the current top hypothesis (after earlier spans were
    corrected), ``span`` the mention being fixed, ``selection`` the entity
    chosen by the gate (if any) and ``offered`` every entity surface shown
    in the prompt.  ``reference``/``gold_entities`` travel with the task
    when the dataset has them; only the oracle backend reads them and
    nothing from them reaches the prompt.
    """

    key: str
    hypotheses: tuple[str, ...]
    text: str
    span: EntitySpan | None = None
    selection: str | None = None
    offered: tuple[str, ...] = ()
    reference: str | None = None
    gold_entities: tuple[str, ...] | None = None


@dataclass(frozen=True)
class RationaleTask:
    """Explain why ``answer_letter`` is the right option of ``mcq``."""

    key: str
    mcq: Any
    answer_letter: str


class LlmBackend(Protocol):
    def complete(self, request: ChatRequest, context: Any = None) -> str: ...


def complete(backend: LlmBackend, request: ChatRequest, context: Any = None) -> str:
    return backend.complete(request, context)


# --------------------------------------------------------------------------
# local reply builders


def format_reply(rationale: str, letter: str, surface: str) -> str:
    return f"<think>{rationale}</think><answer>{letter}: {surface}</answer>"


def argmax_option(options: Sequence[tuple[str, Any]], prefer_defined: bool = False) -> tuple[str, Any]:
    """Highest-PS option, earliest letter on ties.  With ``prefer_defined``
    options that carry a definition (i.e. are known to the gazetteer) win
    over undefined ones."""
    if not options:
        raise ValueError("no options")
    pool = options
    if prefer_defined:
        pool = [o for o in options if o[1].definition] or options
    best = pool[0]
    for opt in pool[1:]:
        if opt[1].ps > best[1].ps:
            best = opt
    return best


def explain(mcq: Any, letter: str) -> str:
    """Template rationale for a known answer, used by the local generators."""
    by_letter = dict(mcq.options)
    chosen = by_letter[letter]
    others = [(l, c) for l, c in mcq.options if l != letter]
    parts = [
        f"The blank in \"{mcq.cloze}\" should hold a named entity that sounds like the mention heard in the audio.",
        f"Option {letter} ({chosen.surface}) has phonetic score {chosen.ps:.2f}"
        + (f" and is defined as: {chosen.definition.rstrip('.')}." if chosen.definition else " but no definition."),
    ]
    if others:
        best_other = max(others, key=lambda o: o[1].ps)
        parts.append(
            f"The strongest alternative, {best_other[0]} ({best_other[1].surface}), scores {best_other[1].ps:.2f}"
            + (" and is not a known entity." if not best_other[1].definition else " but fits the sentence less well.")
        )
    parts.append(f"So {chosen.surface} is the entity that fits the sentence.")
    return format_reply(" ".join(parts), letter, chosen.surface)


def _splice(task: GecTask) -> str:
    if task.span is None or not task.selection:
        return task.text
    return replace_span(task.text, task.span, task.selection)


def _fold(s: str) -> str:
    return " ".join(s.split()).casefold()


class HeuristicBackend:
    """Offline stand-in: argmax-PS selection, splice-based correction."""

    kind = "heuristic"

    def complete(self, request: ChatRequest, context: Any = None) -> str:
        if isinstance(context, McqTask):
            letter, cand = argmax_option(context.mcq.options, prefer_defined=True)
            return format_reply(FALLBACK_RATIONALE, letter, cand.surface)
        if isinstance(context, GecTask):
            return _splice(context)
        if isinstance(context, RationaleTask):
            return explain(context.mcq, context.answer_letter)
        raise BackendError(f"heuristic backend cannot answer context {type(context).__name__}")


class OracleBackend:
    """Answers from gold labels carried in the context.

    MCQ: the gold option.  Correction: the reference when every gold entity
    was offered in the prompt, otherwise the heuristic splice.  Without
    gold labels it behaves like the heuristic backend.
    """

    kind = "oracle"

    def __init__(self):
        self._fallback = HeuristicBackend()

    def complete(self, request: ChatRequest, context: Any = None) -> str:
        if isinstance(context, McqTask) and context.mcq.gold_letter is not None:
            letter = context.mcq.gold_letter
            return format_reply("oracle: gold option", letter, dict(context.mcq.options)[letter].surface)
        if isinstance(context, GecTask) and context.reference is not None and context.gold_entities:
            offered = {_fold(s) for s in context.offered}
            if context.selection:
                offered.add(_fold(context.selection))
            if all(_fold(g) in offered for g in context.gold_entities):
                return context.reference
        return self._fallback.complete(request, context)


class ScriptedBackend:
    """Replays a transcript file of ``{"key", "reply"}`` JSON lines."""

    kind = "scripted"

    def __init__(self, replies: dict[str, str]):
        self.replies = dict(replies)

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        replies = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    replies[str(obj["key"])] = str(obj["reply"])
                except (ValueError, KeyError, TypeError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad transcript line ({exc})") from None
        return cls(replies)

    def complete(self, request: ChatRequest, context: Any = None) -> str:
        key = getattr(context, "key", None)
        if key is None or key not in self.replies:
            raise ScriptMissingError(str(key))
        return self.replies[key]


class RecordingBackend:
    """Wraps a backend and keeps every (key, reply) it produced."""

    def __init__(self, inner: LlmBackend):
        self.inner = inner
        self.kind = getattr(inner, "kind", "recording")
        self._lock = threading.Lock()
        self.records: dict[str, str] = {}

    def complete(self, request: ChatRequest, context: Any = None) -> str:
        reply = self.inner.complete(request, context)
        key = getattr(context, "key", None)
        if key is not None:
            with self._lock:
                self.records[key] = reply
        return reply

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for key in sorted(self.records):
                fh.write(json.dumps({"key": key, "reply": self.records[key]}, ensure_ascii=False) + "\n")


# --------------------------------------------------------------------------
# remote


class HttpBackend:
    """Chat-completions client with bounded concurrency and retries.

    Timeouts, connection errors, 429 and 5xx are retried with exponential
    backoff (429 honours ``Retry-After``).  401/403 fail immediately; other
    4xx are not retried either.
    """

    kind = "http"

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        max_attempts: int = 4,
        backoff: float = 0.5,
        max_backoff: float = 30.0,
        max_in_flight: int = 4,
        client: httpx.Client | None = None,
        sleep=time.sleep,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be positive")
        self.endpoint = endpoint
        self.model = model
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.max_backoff = max_backoff
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_in_flight)
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(timeout=timeout, headers=headers)

    def _delay(self, attempt: int, retry_after: str | None) -> float:
        if retry_after:
            try:
                return min(float(retry_after), self.max_backoff)
            except ValueError:
                pass
        return min(self.backoff * (2 ** attempt), self.max_backoff)

    def complete(self, request: ChatRequest, context: Any = None) -> str:
        body = request.to_json(self.model)
        last: str = ""
        with self._slots:
            for attempt in range(self.max_attempts):
                retry_after = None
                try:
                    resp = self._client.post(self.endpoint, json=body)
                except (httpx.TimeoutException, httpx.TransportError) as exc:
                    last = f"{type(exc).__name__}: {exc}"
                else:
                    if resp.status_code in (401, 403):
                        raise AuthError(f"HTTP {resp.status_code} from {self.endpoint}")
                    if resp.status_code == 429 or resp.status_code >= 500:
                        last = f"HTTP {resp.status_code}"
                        retry_after = resp.headers.get("Retry-After")
                    elif resp.status_code >= 400:
                        raise HttpStatusError(resp.status_code, resp.text)
                    else:
                        return _first_choice(resp)
                if attempt + 1 < self.max_attempts:
                    self._sleep(self._delay(attempt, retry_after))
        raise TransportError(f"{self.endpoint}: gave up after {self.max_attempts} attempts ({last})")


def _first_choice(resp: httpx.Response) -> str:
    try:
        content = resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise MalformedResponseError(f"unexpected response body: {exc!r}") from None
    if not isinstance(content, str):
        raise MalformedResponseError("message content is not a string")
    return content


# --------------------------------------------------------------------------
# construction

BACKEND_KINDS = ("http", "oracle", "scripted", "heuristic")


@dataclass(frozen=True)
class BackendSpec:
    kind: str
    endpoint: str | None = None
    model: str | None = None
    api_key_env: str = DEFAULT_KEY_ENV
    transcript: str | None = None
    timeout: float = 60.0
    max_attempts: int = 4
    max_in_flight: int = 4
    temperature: float = 0.0
    max_tokens: int = 512
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}; expected one of {BACKEND_KINDS}")
        if self.kind == "http" and not (self.endpoint and self.model):
            raise ValueError("http backend needs endpoint and model")
        if self.kind == "scripted" and not self.transcript:
            raise ValueError("scripted backend needs a transcript path")


def make_backend(spec: BackendSpec) -> LlmBackend:
    if spec.kind == "heuristic":
        return HeuristicBackend()
    if spec.kind == "oracle":
        return OracleBackend()
    if spec.kind == "scripted":
        return ScriptedBackend.from_file(spec.transcript)
    return HttpBackend(
        spec.endpoint,
        spec.model,
        api_key=os.environ.get(spec.api_key_env),
        timeout=spec.timeout,
        max_attempts=spec.max_attempts,
        max_in_flight=spec.max_in_flight,
    )
