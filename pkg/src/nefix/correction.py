"""Correction pipelines over 5-best hypotheses.

Modes:

* ``asr``: keep the top hypothesis.
* ``gec``: one correction call over the five hypotheses.
* ``ragec``: as ``gec`` with the retrieved candidates listed in the prompt.
* ``deragec``: per tagged mention, retrieve, enrich with the hypothesis
  mentions, let the gate pick one entity with a rationale, then correct
  conditioned on that single entity.
* ``oracle``: as ``deragec`` but the gold entity replaces the gate.
"""

from __future__ import annotations

import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

from .corpus import AugmentedSample, Sample
from .denoising import (
    RationaleItem,
    Selection,
    augment_candidates,
    make_cloze,
    make_mcq,
    parse_rationale_answer,
    prepare_options,
    render_candidate,
    ReplyError,
    select_entity,
)
from .filtering import FilterSpec
from .index import Candidate, NamedEntityRecord, PhoneticIndex, retrieve_topk
from .llm import ChatRequest, GecTask, LlmBackend
from .phonetics import IpaString, phonemize, phonetic_similarity
from .tagging import EntitySpan, Tagger, replace_span, tag_entities

MODES = ("asr", "gec", "ragec", "deragec", "oracle")
ORACLE_RATIONALE = "ground-truth entity"


@dataclass(frozen=True)
class RunConfig:
    mode: str = "deragec"
    k: int = 10
    fewshot_count: int = 5
    seed: int = 0
    filter: FilterSpec | None = None
    max_options: int = 26
    retries: int = 2
    temperature: float = 0.0
    max_tokens: int = 512

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.fewshot_count < 0:
            raise ValueError("fewshot_count must be nonnegative")
        if not 1 <= self.max_options <= 26:
            raise ValueError("max_options must be in 1..26")
        if self.retries < 0:
            raise ValueError("retries must be nonnegative")


@dataclass
class RunRecord:
    id: str
    mode: str
    transcript: str
    selections: list[dict] = field(default_factory=list)
    fallbacks: list[str] = field(default_factory=list)
    surviving: list[str] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "mode": self.mode,
            "transcript": self.transcript,
            "selections": self.selections,
            "fallbacks": self.fallbacks,
            "surviving": self.surviving,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RunRecord":
        return cls(
            str(obj["id"]), str(obj["mode"]), str(obj["transcript"]),
            list(obj.get("selections", [])), list(obj.get("fallbacks", [])), list(obj.get("surviving", [])),
        )


# --------------------------------------------------------------------------
# building blocks


def run_asr_baseline(sample: Sample) -> str:
    return sample.h1


def splice_correct(h1: str, span: EntitySpan, replacement: str) -> str:
    return replace_span(h1, span, replacement)


def sample_fewshots(pool: Sequence[AugmentedSample], t: int, seed: int) -> list[AugmentedSample]:
    """Seeded uniform draw without replacement from the examples that carry
    a rationale; the whole eligible pool when ``t`` exceeds it."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    eligible = [p for p in pool if p.rationale is not None]
    if t >= len(eligible):
        return eligible
    return random.Random(seed).sample(eligible, t)


def _hypothesis_lines(hypotheses: Sequence[str]) -> str:
    return "\n".join(f"{i}. {h}" for i, h in enumerate(hypotheses, 1))


def _selection_block(cand: Candidate, rationale: str) -> str:
    return f"{render_candidate(cand)} rationale: {rationale}"


def _fewshot_gold(example: AugmentedSample) -> tuple[Candidate, str] | None:
    if not example.candidates or example.cloze is None or len(example.candidates) > 26:
        return None
    mcq = make_mcq(example.cloze, example.candidates)
    try:
        ans = parse_rationale_answer(example.rationale or "", mcq)
    except ReplyError:
        return None
    return mcq.option(ans.letter), ans.rationale


def _fewshot_entity_block(example: AugmentedSample, style: str | None) -> str | None:
    if style is None:
        return None
    if style == "all":
        return "\n".join(render_candidate(c) for c in example.candidates) or None
    gold = _fewshot_gold(example)
    if gold is None:
        return None
    cand, rationale = gold
    return _selection_block(cand, rationale if style == "selected" else ORACLE_RATIONALE)


def render_gec_fewshots(fewshots: Sequence[AugmentedSample], style: str | None = None) -> str:
    blocks = []
    for ex in fewshots:
        lines = ["<input>", f"5-best: {_hypothesis_lines(ex.sample.hypotheses)}"]
        block = _fewshot_entity_block(ex, style)
        if block is not None:
            lines.append(f"Named-Entities: {block}")
        lines += ["<output>", f"Corrected: {ex.sample.reference}"]
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def build_gec_prompt(
    hypotheses: Sequence[str],
    entity_block: str | None = None,
    fewshots: Sequence[AugmentedSample] = (),
    fewshot_style: str | None = None,
) -> str:
    """Fill the correction template.  ``entity_block`` adds the
    Named-Entities line; ``fewshot_style`` (None, "all", "selected",
    "gold") controls what the examples show on that line."""
    from .denoising import load_template

    line = f"Named-Entities: {entity_block}\n" if entity_block is not None else ""
    return load_template("gec").format(
        fewshot_examples=render_gec_fewshots(fewshots, fewshot_style),
        hypotheses=_hypothesis_lines(hypotheses),
        named_entities_line=line,
    )


def _fold(s: str) -> str:
    return " ".join(s.split()).casefold()


def _locate(words: list[str], surface: str, start: int) -> EntitySpan | None:
    target = surface.split()
    n = len(target)
    for i in list(range(start, len(words) - n + 1)) + list(range(0, min(start, len(words) - n + 1))):
        if words[i:i + n] == target:
            return EntitySpan(i, i + n, surface)
    return None


# --------------------------------------------------------------------------
# pipeline


class Corrector:
    """Runs one mode over samples with shared index, tagger and few-shots."""

    def __init__(
        self,
        config: RunConfig,
        backend: LlmBackend | None = None,
        index: PhoneticIndex | None = None,
        tagger: Tagger | None = None,
        pool: Sequence[AugmentedSample] = (),
        gec_backend: LlmBackend | None = None,
    ):
        if config.mode != "asr" and backend is None:
            raise ValueError(f"mode {config.mode} needs a backend")
        if config.mode in ("ragec", "deragec", "oracle") and (index is None or tagger is None):
            raise ValueError(f"mode {config.mode} needs an index and a tagger")
        self.config = config
        self.backend = backend
        self.gec_backend = gec_backend or backend
        self.index = index
        self.tagger = tagger
        self.fewshots = sample_fewshots(pool, config.fewshot_count, config.seed)

    # -- helpers --------------------------------------------------------

    def _request(self, prompt: str) -> ChatRequest:
        return ChatRequest.user(prompt, self.config.temperature, self.config.max_tokens)

    def _retrieve(self, query: IpaString) -> list[Candidate]:
        found = retrieve_topk(self.index, query, self.config.k)
        return self.config.filter.apply(found) if self.config.filter else found

    def _gec(self, sample: Sample, hyps, text, key, span=None, selection=None, offered=(),
             entity_block=None, style=None, record: RunRecord | None = None) -> str:
        prompt = build_gec_prompt(hyps, entity_block, self.fewshots, style)
        task = GecTask(key, tuple(hyps), text, span, selection, tuple(offered),
                       sample.reference, sample.gold_entities)
        reply = self.gec_backend.complete(self._request(prompt), task).strip()
        if not reply:
            record.fallbacks.append(f"empty_reply:{key}")
            return text
        return reply

    def _hyp_mentions(self, sample: Sample) -> list[list[EntitySpan]]:
        return [tag_entities(h, self.tagger) for h in sample.hypotheses]

    # -- modes ----------------------------------------------------------

    def run_gec(self, sample: Sample, record: RunRecord) -> str:
        if self.tagger is not None and not record.surviving:
            record.surviving = [s.surface for spans in self._hyp_mentions(sample) for s in spans]
        return self._gec(sample, sample.hypotheses, sample.h1, f"{sample.id}/gec", record=record)

    def run_ragec(self, sample: Sample, record: RunRecord) -> str:
        spans = tag_entities(sample.h1, self.tagger)
        cands: list[Candidate] = []
        seen: set[str] = set()
        for span in spans:
            q = phonemize(span.surface)
            if not len(q):
                continue
            for c in self._retrieve(q):
                if _fold(c.surface) not in seen:
                    seen.add(_fold(c.surface))
                    cands.append(c)
        record.surviving = [s.surface for spans_h in self._hyp_mentions(sample) for s in spans_h] + [
            c.surface for c in cands]
        if not cands:
            return self.run_gec(sample, record)
        block = "\n".join(render_candidate(c) for c in cands)
        return self._gec(sample, sample.hypotheses, sample.h1, f"{sample.id}/gec",
                         span=None, offered=[c.surface for c in cands],
                         entity_block=block, style="all", record=record)

    def _choose(self, sample: Sample, i: int, span: EntitySpan, text: str, query: IpaString,
                hyp_spans: list[list[EntitySpan]], record: RunRecord) -> Selection | None:
        if self.config.mode == "oracle":
            golds = []
            for g in sample.gold_entities:
                known = self.index.lookup(g)
                ipa = phonemize(g)
                ps = phonetic_similarity(query, ipa) if len(ipa) else 0.0
                golds.append(Candidate(NamedEntityRecord(g, ipa, known.definition if known else "", "gold"), ps))
            best = max(golds, key=lambda c: c.ps)
            return Selection("", best, ORACLE_RATIONALE)
        n_hyp = [spans[i].surface for spans in hyp_spans if len(spans) > i]
        cands = augment_candidates(n_hyp, self._retrieve(query), query, self.index)
        record.surviving.extend(n_hyp)
        options = prepare_options(cands, self.config.max_options)
        if not options:
            record.fallbacks.append(f"no_candidates:{i}")
            return None
        mcq = make_mcq(make_cloze(text, span), options, sample.gold_entities)
        sel = select_entity(self.backend, mcq, self.fewshots, self.config.retries, f"{sample.id}/{i}",
                            self.config.temperature, self.config.max_tokens)
        if sel.fallback:
            record.fallbacks.append(f"select_fallback:{i}")
        return sel

    def run_deragec(self, sample: Sample, record: RunRecord) -> str:
        oracle = self.config.mode == "oracle"
        spans = tag_entities(sample.h1, self.tagger)
        if not spans:
            record.fallbacks.append("no_spans")
            if oracle:
                golds = [render_candidate(Candidate(NamedEntityRecord(g, phonemize(g)), 1.0))
                         for g in sample.gold_entities]
                return self._gec(sample, sample.hypotheses, sample.h1, f"{sample.id}/gec",
                                 offered=sample.gold_entities, entity_block="\n".join(golds),
                                 style="gold", record=record)
            return self.run_gec(sample, record)
        hyp_spans = [] if oracle else self._hyp_mentions(sample)
        text = sample.h1
        hyps = list(sample.hypotheses)
        shift = 0
        for i, orig in enumerate(spans):
            words = text.split()
            span = EntitySpan(orig.start_word + shift, orig.end_word + shift, orig.surface)
            if words[span.start_word:span.end_word] != orig.surface.split():
                span = _locate(words, orig.surface, max(0, min(span.start_word, len(words))))
                if span is None:
                    record.fallbacks.append(f"span_lost:{i}")
                    continue
            query = phonemize(orig.surface)
            if not len(query):
                record.fallbacks.append(f"empty_query:{i}")
                continue
            sel = self._choose(sample, i, span, text, query, hyp_spans, record)
            if sel is None:
                continue
            record.surviving.append(sel.candidate.surface)
            record.selections.append({
                "span": orig.surface,
                "letter": sel.letter,
                "entity": sel.candidate.surface,
                "ps": sel.candidate.ps,
                "rationale": sel.rationale,
            })
            hyps[0] = text
            new = self._gec(sample, hyps, text, f"{sample.id}/{i}/gec", span=span,
                            selection=sel.candidate.surface, offered=[sel.candidate.surface],
                            entity_block=_selection_block(sel.candidate, sel.rationale),
                            style="gold" if oracle else "selected", record=record)
            shift = span.start_word - orig.start_word + len(new.split()) - len(words)
            text = new
        return text

    def correct(self, sample: Sample) -> RunRecord:
        mode = self.config.mode
        record = RunRecord(sample.id, mode, sample.h1)
        if mode == "oracle" and not sample.gold_entities:
            raise ValueError(f"sample {sample.id}: oracle mode needs gold entities")
        if mode == "asr":
            record.transcript = run_asr_baseline(sample)
            if self.tagger is not None:
                record.surviving = [s.surface for spans in
                                    (tag_entities(h, self.tagger) for h in sample.hypotheses) for s in spans]
        elif mode == "gec":
            record.transcript = self.run_gec(sample, record)
        elif mode == "ragec":
            record.transcript = self.run_ragec(sample, record)
        else:
            record.transcript = self.run_deragec(sample, record)
        return record

    def run(self, samples: Sequence[Sample], jobs: int = 1) -> list[RunRecord]:
        if jobs <= 1:
            return [self.correct(s) for s in samples]
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(self.correct, samples))


def rationale_items(
    samples: Sequence[Sample],
    index: PhoneticIndex,
    tagger: Tagger,
    k: int = 10,
    filter: FilterSpec | None = None,
) -> list[RationaleItem]:
    """Build the (sample, candidates, span) inputs for rationale synthesis
    from each sample's first tagged mention; samples without one are
    skipped."""
    items = []
    for s in samples:
        spans = tag_entities(s.h1, tagger)
        if not spans:
            continue
        query = phonemize(spans[0].surface)
        if not len(query):
            continue
        found = retrieve_topk(index, query, k)
        if filter:
            found = filter.apply(found)
        n_hyp = [sp[0].surface for sp in (tag_entities(h, tagger) for h in s.hypotheses) if sp]
        cands = augment_candidates(n_hyp, found, query, index)
        items.append(RationaleItem(s, tuple(cands), spans[0], f"{s.id}/0/rationale"))
    return items
