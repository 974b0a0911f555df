"""Word error rate, named-entity hit ratio, NER F1 and report assembly.

Text is normalized before word comparison: Unicode NFKC, lowercase,
dashes and slashes become spaces, other punctuation is removed, and
whitespace is collapsed.
"""

from __future__ import annotations

import csv
import io
import json
import unicodedata
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Sample, canonical_line
from .filtering import candidate_recall_precision
from .tagging import Tagger, tag_entities

CSV_HEADER = ("method", "recall", "precision", "wer", "ne_hit")


class MetricUndefined(ValueError):
    pass


def normalize(text: str) -> str:
    out = []
    for ch in unicodedata.normalize("NFKC", text).lower():
        cat = unicodedata.category(ch)
        if ch in "/" or cat == "Pd":
            out.append(" ")
        elif cat.startswith("P"):
            continue
        else:
            out.append(ch)
    return " ".join("".join(out).split())


def edit_distance(a: Sequence[str], b: Sequence[str]) -> int:
    """Unit-cost Levenshtein distance between token sequences."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def wer(reference: str, hypothesis: str) -> tuple[int, int]:
    """(word edit distance, reference word count) after normalization."""
    ref = normalize(reference).split()
    return edit_distance(ref, normalize(hypothesis).split()), len(ref)


@dataclass(frozen=True)
class WerStats:
    distance: int
    words: int
    skipped: int  # references empty after normalization

    @property
    def value(self) -> float:
        if self.words == 0:
            raise MetricUndefined("metric undefined: no reference words")
        return self.distance / self.words


def corpus_wer(references: Sequence[str], hypotheses: Sequence[str]) -> WerStats:
    if len(references) != len(hypotheses):
        raise ValueError("references and hypotheses differ in length")
    dist = words = skipped = 0
    for r, h in zip(references, hypotheses):
        d, n = wer(r, h)
        if n == 0:
            skipped += 1
            continue
        dist += d
        words += n
    return WerStats(dist, words, skipped)


def _occurrences(phrase: str, text: str) -> int:
    target = normalize(phrase).split()
    words = normalize(text).split()
    if not target:
        return 0
    n = len(target)
    return sum(words[i:i + n] == target for i in range(len(words) - n + 1))


@dataclass(frozen=True)
class NeHit:
    hits: int
    gold: int
    predicted: int  # entities tagged in the transcripts

    @property
    def ratio(self) -> float:
        return self.hits / self.gold

    @property
    def literal_ratio(self) -> float:
        """Hits over entities found in the transcripts (0 when none)."""
        return self.hits / self.predicted if self.predicted else 0.0


def ne_hits(
    references: Sequence[str],
    transcripts: Sequence[str],
    tagger: Tagger,
    gold: Sequence[Iterable[str]] | None = None,
) -> NeHit:
    """Gold entities come from tagging the references (or ``gold`` when
    given); each gold occurrence is a hit when the transcript contains it
    as whole words, case-insensitively."""
    if len(references) != len(transcripts):
        raise ValueError("references and transcripts differ in length")
    hits = total = predicted = 0
    for i, (ref, hyp) in enumerate(zip(references, transcripts)):
        golds = list(gold[i]) if gold is not None else [s.surface for s in tag_entities(ref, tagger)]
        for g, n in Counter(normalize(g) for g in golds).items():
            total += n
            hits += min(n, _occurrences(g, hyp))
        predicted += len(tag_entities(hyp, tagger))
    if total == 0:
        raise MetricUndefined("metric undefined: no gold entities in the corpus")
    return NeHit(hits, total, predicted)


def ne_hit_ratio(references: Sequence[str], transcripts: Sequence[str], tagger: Tagger) -> float:
    return ne_hits(references, transcripts, tagger).ratio


def _f1(tp: int, n_pseudo: int, n_pred: int) -> float:
    if n_pseudo == 0 and n_pred == 0:
        return 1.0
    if n_pseudo == 0 or n_pred == 0 or tp == 0:
        return 0.0
    p, r = tp / n_pred, tp / n_pseudo
    return 2 * p * r / (p + r)


def ner_f1(pseudo_labels: Iterable[str], predicted: Iterable[str]) -> float:
    """F1 between two multisets of entity surfaces (exact match)."""
    a, b = Counter(pseudo_labels), Counter(predicted)
    return _f1(sum((a & b).values()), sum(a.values()), sum(b.values()))


def corpus_ner_f1(references: Sequence[str], hypotheses: Sequence[str], tagger: Tagger) -> float:
    """Micro F1 of tagging the hypotheses against tags of the references."""
    tp = n_pseudo = n_pred = 0
    for ref, hyp in zip(references, hypotheses):
        a = Counter(s.surface for s in tag_entities(ref, tagger))
        b = Counter(s.surface for s in tag_entities(hyp, tagger))
        tp += sum((a & b).values())
        n_pseudo += sum(a.values())
        n_pred += sum(b.values())
    return _f1(tp, n_pseudo, n_pred)


# --------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class EvalReport:
    method: str
    wer: float
    ne_hit_ratio: float
    ne_hit_ratio_literal: float
    candidate_recall: float
    candidate_precision: float
    ner_f1: float | None
    samples: int
    words: int
    entities: int
    skipped_references: int = 0

    def __post_init__(self):
        if self.wer < 0:
            raise ValueError("wer must be nonnegative")
        for name in ("ne_hit_ratio", "ne_hit_ratio_literal", "candidate_recall", "candidate_precision"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} out of range")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "EvalReport":
        return cls(**obj)


def assemble_report(records, dataset: Sequence[Sample], tagger: Tagger, method: str | None = None) -> EvalReport:
    """Score run records (objects with ``id``, ``mode``, ``transcript`` and
    ``surviving``) against the dataset they were produced from."""
    by_id = {r.id: r for r in records}
    ids = [s.id for s in dataset]
    missing = [i for i in ids if i not in by_id]
    extra = sorted(set(by_id) - set(ids))
    if missing or extra:
        raise ValueError(f"run and dataset ids differ; missing from run: {missing[:10]}, not in dataset: {extra[:10]}")
    recs = [by_id[i] for i in ids]
    refs = [s.reference for s in dataset]
    outs = [r.transcript for r in recs]
    w = corpus_wer(refs, outs)
    gold = None
    if all(s.gold_entities for s in dataset):
        gold = [s.gold_entities for s in dataset]
    hits = ne_hits(refs, outs, tagger, gold)
    golds = gold if gold is not None else [[sp.surface for sp in tag_entities(r, tagger)] for r in refs]
    recall, precision = candidate_recall_precision([r.surviving for r in recs], golds)
    return EvalReport(
        method=method or (recs[0].mode if recs else "empty"),
        wer=w.value,
        ne_hit_ratio=hits.ratio,
        ne_hit_ratio_literal=hits.literal_ratio,
        candidate_recall=recall,
        candidate_precision=precision,
        ner_f1=corpus_ner_f1(refs, [s.h1 for s in dataset], tagger),
        samples=len(dataset),
        words=w.words,
        entities=hits.gold,
        skipped_references=w.skipped,
    )


def render_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in reports:
        writer.writerow([r.method, repr(r.candidate_recall), repr(r.candidate_precision), repr(r.wer), repr(r.ne_hit_ratio)])
    return buf.getvalue()


def write_reports(reports: Sequence[EvalReport], json_path: str | Path, csv_path: str | Path) -> None:
    Path(json_path).write_text("".join(canonical_line(r.to_json()) + "\n" for r in reports), encoding="utf-8")
    Path(csv_path).write_text(render_csv(reports), encoding="utf-8")


def read_reports(path: str | Path) -> list[EvalReport]:
    return [EvalReport.from_json(json.loads(line))
            for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
