"""Evaluation samples, JSONL ingest, and a seeded synthetic corpus generator."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .index import Candidate, NamedEntityRecord
from .phonetics import feature_table, phonemize, respell

N_BEST = 5


class DatasetError(ValueError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}: line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class Sample:
    id: str
    hypotheses: tuple[str, ...]
    reference: str
    gold_entities: tuple[str, ...] | None = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "hypotheses", tuple(self.hypotheses))
        if self.gold_entities is not None:
            object.__setattr__(self, "gold_entities", tuple(self.gold_entities))
        if len(self.hypotheses) != N_BEST:
            raise ValueError(f"sample {self.id}: expected {N_BEST} hypotheses, got {len(self.hypotheses)}")
        if not self.reference.strip():
            raise ValueError(f"sample {self.id}: empty reference")

    @property
    def h1(self) -> str:
        return self.hypotheses[0]

    def to_json(self) -> dict[str, Any]:
        obj: dict[str, Any] = {"id": self.id, "hypotheses": list(self.hypotheses), "reference": self.reference}
        if self.gold_entities is not None:
            obj["gold_entities"] = list(self.gold_entities)
        if self.metadata:
            obj["metadata"] = self.metadata
        return obj


@dataclass(frozen=True)
class AugmentedSample:
    """A sample with its candidate list and, once synthesized, a tagged rationale."""

    sample: Sample
    candidates: tuple[Candidate, ...]
    rationale: str | None = None
    cloze: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        ps = [c.ps for c in self.candidates]
        if any(a < b for a, b in zip(ps, ps[1:])):
            raise ValueError(f"sample {self.sample.id}: candidates must be sorted by ps descending")
        if self.rationale is not None:
            for tag in ("<think>", "</think>", "<answer>", "</answer>"):
                if tag not in self.rationale:
                    raise ValueError(f"sample {self.sample.id}: rationale lacks {tag}")

    def to_json(self) -> dict[str, Any]:
        obj = self.sample.to_json()
        obj["candidates"] = [
            {"surface": c.surface, "ps": c.ps, "definition": c.definition} for c in self.candidates
        ]
        if self.rationale is not None:
            obj["rationale"] = self.rationale
        if self.cloze is not None:
            obj["cloze"] = self.cloze
        return obj


# --------------------------------------------------------------------------
# IO

_KNOWN_KEYS = {"id", "hypotheses", "reference", "gold_entities", "metadata"}
_AUGMENTED_KEYS = _KNOWN_KEYS | {"candidates", "rationale", "cloze"}


def canonical_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def write_jsonl(path: str | Path, objs: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for obj in objs:
            fh.write(canonical_line(obj) + "\n")


def _parse_sample(obj: Any, path, lineno: int, pad: bool, allowed: set[str]) -> Sample:
    if not isinstance(obj, dict):
        raise DatasetError(path, lineno, "expected a JSON object")
    unknown = set(obj) - allowed
    if unknown:
        raise DatasetError(path, lineno, f"unknown keys {sorted(unknown)}")
    for key in ("id", "hypotheses", "reference"):
        if key not in obj:
            raise DatasetError(path, lineno, f"missing {key!r}")
    hyps = obj["hypotheses"]
    if not isinstance(hyps, list) or not hyps or not all(isinstance(h, str) for h in hyps):
        raise DatasetError(path, lineno, "'hypotheses' must be a nonempty list of strings")
    metadata = dict(obj.get("metadata") or {})
    if len(hyps) != N_BEST:
        if len(hyps) > N_BEST or not pad:
            raise DatasetError(path, lineno, f"expected {N_BEST} hypotheses, got {len(hyps)}")
        metadata["padded_from"] = len(hyps)
        hyps = hyps + [hyps[-1]] * (N_BEST - len(hyps))
    ref = obj["reference"]
    if not isinstance(ref, str) or not ref.strip():
        raise DatasetError(path, lineno, "'reference' must be a nonempty string")
    gold = obj.get("gold_entities")
    if gold is not None and not (isinstance(gold, list) and all(isinstance(g, str) for g in gold)):
        raise DatasetError(path, lineno, "'gold_entities' must be a list of strings")
    return Sample(str(obj["id"]), tuple(hyps), ref, None if gold is None else tuple(gold), metadata)


def _iter_json(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(path, lineno, f"malformed JSON ({exc.msg})") from None


def load_dataset(path: str | Path, pad: bool = False) -> list[Sample]:
    return [_parse_sample(obj, path, lineno, pad, _KNOWN_KEYS | {"candidates", "rationale", "cloze"})
            for lineno, obj in _iter_json(path)]


def write_dataset(path: str | Path, samples: Iterable[Sample]) -> None:
    write_jsonl(path, (s.to_json() for s in samples))


def load_augmented(path: str | Path) -> list[AugmentedSample]:
    out = []
    for lineno, obj in _iter_json(path):
        sample = _parse_sample(obj, path, lineno, False, _AUGMENTED_KEYS)
        try:
            cands = tuple(
                Candidate(
                    NamedEntityRecord(c["surface"], phonemize(c["surface"]), c.get("definition") or "", c.get("source") or ""),
                    float(c["ps"]),
                )
                for c in obj.get("candidates", [])
            )
            out.append(AugmentedSample(sample, cands, obj.get("rationale"), obj.get("cloze")))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(path, lineno, f"bad augmented record ({exc})") from None
    return out


def write_augmented(path: str | Path, items: Iterable[AugmentedSample]) -> None:
    write_jsonl(path, (a.to_json() for a in items))


# --------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class NoiseConfig:
    max_edits: int = 2
    min_edits: int = 0
    word_sub_prob: float = 0.0

    def __post_init__(self):
        if not 0 <= self.min_edits <= self.max_edits:
            raise ValueError("need 0 <= min_edits <= max_edits")


TEMPLATES = (
    "play songs by {}",
    "tell me more about {}",
    "i want to visit {} next summer",
    "what is the weather like in {} today",
    "call {} on my phone",
    "who is {}",
    "add the new album from {} to my playlist",
    "we watched a documentary about {} last night",
    "set a reminder to email {} tomorrow",
    "how far is it from here to {}",
    "my sister works for {} now",
    "is {} open on sunday",
)

# non-entity confusions for optional word-level noise
WORD_CONFUSIONS = {
    "to": "two", "for": "four", "the": "a", "my": "me", "songs": "song", "about": "a bout",
    "new": "knew", "here": "hear", "by": "buy", "is": "was", "last": "lost", "night": "knight",
    "some": "sum", "weather": "whether", "on": "in", "more": "moore", "from": "for",
}

_ONSETS = ("p", "b", "t", "d", "k", "ɡ", "f", "v", "s", "z", "m", "n", "l", "ɹ", "w", "h",
           "ʃ", "tʃ", "dʒ", "j", "s t", "p l", "b ɹ", "k ɹ", "t ɹ", "ɡ l", "s k", "f l", "")
_NUCLEI = ("i", "ɪ", "ɛ", "æ", "ɑ", "ʌ", "u", "ɔ", "o", "e ɪ", "a ɪ", "o ʊ", "ə")
_CODAS = ("", "", "", "n", "m", "l", "s", "t", "k", "d", "k s", "n d", "s t")
_KINDS = ("singer", "rock band", "football club", "river", "novel", "city", "software company",
          "painter", "television series", "mountain", "restaurant chain", "poet", "video game")
_PLACES = ("Portugal", "Ohio", "Kenya", "Norway", "Chile", "Vietnam", "Quebec", "Bavaria",
           "Tasmania", "Morocco", "Peru", "Scotland")
_ADJECTIVES = ("famous", "little-known", "award-winning", "historic", "popular", "experimental")


def _pseudo_word(rng: random.Random) -> str:
    segs: list[str] = []
    for _ in range(rng.choice((2, 2, 3))):
        for part in (rng.choice(_ONSETS), rng.choice(_NUCLEI), rng.choice(_CODAS)):
            segs.extend(part.split())
    return respell(segs).capitalize()


def synth_gazetteer(n: int, seed: int = 0) -> list[NamedEntityRecord]:
    """Pronounceable pseudo-names with one-line definitions."""
    rng = random.Random(seed)
    avoid = {w for t in TEMPLATES for w in t.split()} | set(WORD_CONFUSIONS.values())
    seen: set[str] = set()
    out: list[NamedEntityRecord] = []
    while len(out) < n:
        words = [_pseudo_word(rng) for _ in range(rng.choice((1, 2, 2)))]
        if any(w.lower() in avoid for w in words):
            continue
        surface = " ".join(words)
        if surface.casefold() in seen:
            continue
        seen.add(surface.casefold())
        adj = rng.choice(_ADJECTIVES)
        article = "an" if adj[0] in "aeiou" else "a"
        definition = f"{surface} is {article} {adj} {rng.choice(_KINDS)} from {rng.choice(_PLACES)}."
        out.append(NamedEntityRecord(surface, phonemize(surface), definition, "synthetic"))
    return out


def _near_segments(top: int = 3) -> dict[str, tuple[str, ...]]:
    """For each segment, the ``top`` segments with smallest nonzero substitution cost."""
    table = feature_table()
    out = {}
    for i, seg in enumerate(table.segments):
        order = np.lexsort((np.arange(len(table.segments)), table.diff_units[i]))
        out[seg] = tuple(table.segments[j] for j in order if j != i)[:top]
    return out


def perturb_segments(segs: Sequence[str], rng: random.Random, near: dict[str, tuple[str, ...]]) -> list[str]:
    """One random phoneme-level edit: near substitution, insertion, or deletion."""
    segs = list(segs)
    op = rng.choices(("sub", "ins", "del"), weights=(0.6, 0.2, 0.2))[0]
    if op == "del" and len(segs) < 2:
        op = "sub"
    pos = rng.randrange(len(segs))
    if op == "sub":
        segs[pos] = rng.choice(near[segs[pos]])
    elif op == "ins":
        segs.insert(pos, rng.choice(near[segs[pos]]))
    else:
        del segs[pos]
    return segs


def _misspell(surface: str, n_edits: int, rng: random.Random, near) -> str:
    words = surface.split()
    ipa = [list(phonemize(w).segments) for w in words]
    changed = [False] * len(words)
    for _ in range(n_edits):
        choices = [i for i, segs in enumerate(ipa) if segs]
        if not choices:
            break
        i = rng.choice(choices)
        ipa[i] = perturb_segments(ipa[i], rng, near)
        changed[i] = True
    out = []
    for word, segs, dirty in zip(words, ipa, changed):
        if not dirty:
            out.append(word)
            continue
        spelled = respell(segs)
        out.append(spelled.capitalize() if word[:1].isupper() else spelled)
    return " ".join(out)


def _confuse_words(words: list[str], rng: random.Random) -> list[str]:
    slots = [i for i, w in enumerate(words) if w in WORD_CONFUSIONS]
    if not slots:
        return words
    i = rng.choice(slots)
    return words[:i] + WORD_CONFUSIONS[words[i]].split() + words[i + 1:]


def synth_corpus(
    gazetteer: Sequence[NamedEntityRecord],
    n: int,
    noise: NoiseConfig = NoiseConfig(),
    seed: int = 0,
) -> list[Sample]:
    """Template sentences with one gold entity each; hypotheses carry
    phoneme-level misspellings of the entity (and optional word noise).

    ``metadata["mentions"]`` holds the entity mention as written in each
    hypothesis, so a gazetteer tagger can locate misspelled mentions.
    """
    if not gazetteer:
        raise ValueError("empty gazetteer")
    rng = random.Random(seed)
    near = _near_segments()
    samples = []
    for i in range(n):
        entity = rng.choice(gazetteer).surface
        t_idx = rng.randrange(len(TEMPLATES))
        template = TEMPLATES[t_idx]
        hyps, mentions = [], []
        for _ in range(N_BEST):
            mention = _misspell(entity, rng.randint(noise.min_edits, noise.max_edits), rng, near)
            before, after = (part.split() for part in template.split("{}"))
            if noise.word_sub_prob and rng.random() < noise.word_sub_prob:
                if rng.random() < 0.5 and before:
                    before = _confuse_words(before, rng)
                elif after:
                    after = _confuse_words(after, rng)
            hyps.append(" ".join(before + mention.split() + after))
            mentions.append(mention)
        samples.append(Sample(
            id=f"syn{seed}-{i:05d}",
            hypotheses=tuple(hyps),
            reference=template.format(entity),
            gold_entities=(entity,),
            metadata={"mentions": mentions, "template": t_idx},
        ))
    return samples


def mention_surfaces(samples: Iterable[Sample]) -> set[str]:
    """All hypothesis-side mention strings recorded by the synthetic generator."""
    out: set[str] = set()
    for s in samples:
        out.update(m for m in s.metadata.get("mentions", ()) if m.strip())
    return out
