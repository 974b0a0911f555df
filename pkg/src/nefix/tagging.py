"""Named-entity mention tagging over whitespace-tokenized transcripts."""

from __future__ import annotations

import string
import threading
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence

import httpx

_EDGE_PUNCT = string.punctuation + "“”‘’«»"


@dataclass(frozen=True)
class EntitySpan:
    start_word: int
    end_word: int  # exclusive
    surface: str

    def check(self, words: Sequence[str]) -> None:
        if not (0 <= self.start_word < self.end_word <= len(words)):
            raise ValueError(f"span [{self.start_word}, {self.end_word}) out of range for {len(words)} words")
        if self.surface != " ".join(words[self.start_word:self.end_word]):
            raise ValueError(f"span surface {self.surface!r} does not match the covered words")


class Tagger(Protocol):
    def tag(self, text: str) -> list[EntitySpan]: ...


class TaggerError(RuntimeError):
    def __init__(self, endpoint: str, cause: Exception | str):
        super().__init__(f"tagger request to {endpoint} failed: {cause}")
        self.endpoint = endpoint
        self.cause = cause


def _key(word: str) -> str:
    return word.strip(_EDGE_PUNCT).casefold()


class GazetteerTagger:
    """Longest-match, leftmost-first, case-insensitive lookup of known surfaces.

    Edge punctuation on transcript words is ignored when matching, so
    ``"adele."`` matches the surface ``Adele``.
    """

    def __init__(self, surfaces: Iterable[str]):
        self._entries: set[tuple[str, ...]] = set()
        self.max_words = 0
        for s in surfaces:
            key = tuple(k for k in (_key(w) for w in s.split()) if k)
            if key:
                self._entries.add(key)
                self.max_words = max(self.max_words, len(key))

    def __len__(self) -> int:
        return len(self._entries)

    def extended(self, surfaces: Iterable[str]) -> "GazetteerTagger":
        out = GazetteerTagger(())
        out._entries = set(self._entries)
        out.max_words = self.max_words
        for s in surfaces:
            key = tuple(k for k in (_key(w) for w in s.split()) if k)
            if key:
                out._entries.add(key)
                out.max_words = max(out.max_words, len(key))
        return out

    def tag(self, text: str) -> list[EntitySpan]:
        words = text.split()
        keys = [_key(w) for w in words]
        spans = []
        i = 0
        while i < len(words):
            for size in range(min(self.max_words, len(words) - i), 0, -1):
                if tuple(keys[i:i + size]) in self._entries and keys[i]:
                    spans.append(EntitySpan(i, i + size, " ".join(words[i:i + size])))
                    i += size
                    break
            else:
                i += 1
        return spans


class RemoteTagger:
    """Client for an HTTP tagging service.

    Request: ``POST {"text": str, "labels": [str]}``; response:
    ``{"entities": [{"start_word", "end_word", "surface"}]}``.
    """

    def __init__(
        self,
        endpoint: str,
        labels: Sequence[str] = ("person", "organization", "location", "work of art", "product"),
        timeout: float = 10.0,
        max_in_flight: int = 4,
        client: httpx.Client | None = None,
    ):
        self.endpoint = endpoint
        self.labels = list(labels)
        self.timeout = timeout
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._client = client or httpx.Client(timeout=timeout)

    def tag(self, text: str) -> list[EntitySpan]:
        if not text.split():
            return []
        with self._slots:
            try:
                resp = self._client.post(self.endpoint, json={"text": text, "labels": self.labels})
                resp.raise_for_status()
                payload = resp.json()
            except (httpx.HTTPError, ValueError) as exc:
                raise TaggerError(self.endpoint, exc) from exc
        try:
            spans = [
                EntitySpan(int(e["start_word"]), int(e["end_word"]), str(e["surface"]))
                for e in payload["entities"]
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise TaggerError(self.endpoint, f"malformed response: {exc}") from exc
        return _normalize_spans(text.split(), spans)


def _normalize_spans(words: Sequence[str], spans: list[EntitySpan]) -> list[EntitySpan]:
    """Validate, sort, and drop spans overlapping an earlier one."""
    out: list[EntitySpan] = []
    for span in sorted(spans, key=lambda s: (s.start_word, -s.end_word)):
        if not (0 <= span.start_word < span.end_word <= len(words)):
            continue
        span = EntitySpan(span.start_word, span.end_word, " ".join(words[span.start_word:span.end_word]))
        if out and span.start_word < out[-1].end_word:
            continue
        out.append(span)
    return out


def tag_entities(text: str, tagger: Tagger) -> list[EntitySpan]:
    if not text.strip():
        return []
    return _normalize_spans(text.split(), tagger.tag(text))


def replace_span(text: str, span: EntitySpan, replacement: str) -> str:
    """Replace the words under ``span`` and rejoin with single spaces."""
    words = text.split()
    if not (0 <= span.start_word < span.end_word <= len(words)):
        raise ValueError(f"span [{span.start_word}, {span.end_word}) out of range for {len(words)} words")
    return " ".join(words[:span.start_word] + replacement.split() + words[span.end_word:])
