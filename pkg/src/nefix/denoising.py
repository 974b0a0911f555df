"""Candidate enrichment, the multiple-choice gate and rationale synthesis.

Candidates are shown to the selector as lettered options carrying their
phonetic score and definition.  The selector answers with a rationale in
``<think>`` tags and a ``letter: entity`` answer in ``<answer>`` tags.
"""

from __future__ import annotations

import re
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Sequence

from .corpus import AugmentedSample, Sample
from .index import Candidate, NamedEntityRecord, PhoneticIndex
from .llm import (
    FALLBACK_RATIONALE,
    BackendError,
    ChatRequest,
    LlmBackend,
    McqTask,
    RationaleTask,
    argmax_option,
)
from .phonetics import DEFAULT_COSTS, EditCosts, IpaString, phonemize, phonetic_similarity
from .tagging import EntitySpan, replace_span

BLANK = "[BLANK]"
MAX_OPTIONS = len(string.ascii_uppercase)
NO_DEFINITION = "(no definition)"


class ReplyError(ValueError):
    pass


class ParseError(ReplyError):
    pass


class InvalidOptionError(ReplyError):
    pass


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    return resources.files("nefix").joinpath("templates", f"{name}.txt").read_text(encoding="utf-8")


def _fold(s: str) -> str:
    return " ".join(s.split()).casefold()


# --------------------------------------------------------------------------
# candidates


def make_cloze(h1: str, span: EntitySpan) -> str:
    return replace_span(h1, span, BLANK)


def augment_candidates(
    n_hyp: Sequence[str],
    retrieved: Sequence[Candidate],
    query: IpaString,
    index: PhoneticIndex | None = None,
    costs: EditCosts = DEFAULT_COSTS,
) -> list[Candidate]:
    """Hypothesis mentions (scored against ``query``) followed by retrieved
    candidates, deduplicated case-insensitively keeping the first."""
    out: list[Candidate] = []
    seen: set[str] = set()
    for surface in n_hyp:
        surface = " ".join(surface.split())
        if not surface or _fold(surface) in seen:
            continue
        seen.add(_fold(surface))
        known = index.lookup(surface) if index is not None else None
        ipa = phonemize(surface)
        ps = phonetic_similarity(query, ipa, costs) if len(query) or len(ipa) else 0.0
        out.append(Candidate(NamedEntityRecord(surface, ipa, known.definition if known else "", "hypothesis"), ps))
    for cand in retrieved:
        if _fold(cand.surface) not in seen:
            seen.add(_fold(cand.surface))
            out.append(cand)
    return out


def prepare_options(candidates: Sequence[Candidate], max_options: int = MAX_OPTIONS) -> list[Candidate]:
    """Stable sort by descending score, then cap."""
    if not 1 <= max_options <= MAX_OPTIONS:
        raise ValueError(f"max_options must be in 1..{MAX_OPTIONS}")
    return sorted(candidates, key=lambda c: -c.ps)[:max_options]


def render_candidate(c: Candidate) -> str:
    return f"< {c.surface} | phonetic-score: {c.ps:.2f} | def: {c.definition or NO_DEFINITION} >"


def option_line(letter: str, c: Candidate) -> str:
    return f"{letter}: {c.surface} ({c.ps:.2f} | {c.definition or NO_DEFINITION})"


# --------------------------------------------------------------------------
# MCQ


@dataclass(frozen=True)
class McqItem:
    cloze: str
    options: tuple[tuple[str, Candidate], ...]
    gold_letter: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(self.options))
        if self.cloze.split().count(BLANK) != 1:
            raise ValueError(f"cloze must contain exactly one {BLANK} token: {self.cloze!r}")
        if not self.options:
            raise ValueError("MCQ needs at least one option")
        letters = [l for l, _ in self.options]
        if letters != list(string.ascii_uppercase[:len(letters)]):
            raise ValueError(f"option letters must run A, B, C, ...: {letters}")
        if self.gold_letter is not None and self.gold_letter not in letters:
            raise ValueError(f"gold letter {self.gold_letter!r} is not an option")

    def option(self, letter: str) -> Candidate:
        for l, c in self.options:
            if l == letter:
                return c
        raise KeyError(letter)

    def options_text(self) -> str:
        return "\n".join(option_line(l, c) for l, c in self.options)

    def input_block(self) -> str:
        return f"Cloze sentence: {self.cloze}\nOptions: {self.options_text()}"


def make_mcq(cloze: str, candidates: Sequence[Candidate], gold: Iterable[str] | None = None) -> McqItem:
    if not candidates:
        raise ValueError("MCQ needs at least one candidate")
    if len(candidates) > MAX_OPTIONS:
        raise ValueError(f"option overflow: {len(candidates)} candidates > {MAX_OPTIONS} letters")
    options = tuple(zip(string.ascii_uppercase, candidates))
    gold_letter = None
    if gold is not None:
        golds = {_fold(g) for g in gold}
        gold_letter = next((l for l, c in options if _fold(c.surface) in golds), None)
    return McqItem(cloze, options, gold_letter)


def _fewshot_mcq(example: AugmentedSample) -> McqItem | None:
    if example.cloze is None or not example.candidates or len(example.candidates) > MAX_OPTIONS:
        return None
    return make_mcq(example.cloze, example.candidates)


def _answer_text(rationale: str) -> str:
    m = _ANSWER.search(rationale)
    return m.group(1).strip() if m else ""


def render_fewshots(fewshots: Sequence[AugmentedSample], reasoning: bool = True) -> str:
    blocks = []
    for ex in fewshots:
        mcq = _fewshot_mcq(ex)
        if mcq is None or ex.rationale is None:
            continue
        output = ex.rationale.strip() if reasoning else f"Answer: {_answer_text(ex.rationale)}"
        blocks.append(f"<input>\n{mcq.input_block()}\n<output>\n{output}")
    return "\n\n".join(blocks)


def render_mcq_prompt(mcq: McqItem, fewshots: Sequence[AugmentedSample] = (), reasoning: bool = True) -> str:
    template = load_template("select_reasoning" if reasoning else "select_plain")
    return template.format(
        fewshot_examples=render_fewshots(fewshots, reasoning),
        cloze_sentence=mcq.cloze,
        options=mcq.options_text(),
    )


def build_mcq(
    cloze: str,
    candidates: Sequence[Candidate],
    fewshots: Sequence[AugmentedSample] = (),
    gold: Iterable[str] | None = None,
    reasoning: bool = True,
) -> tuple[McqItem, str]:
    mcq = make_mcq(cloze, candidates, gold)
    return mcq, render_mcq_prompt(mcq, fewshots, reasoning)


# --------------------------------------------------------------------------
# replies

_THINK = re.compile(r"<think>(.*?)</think>", re.S)
_ANSWER = re.compile(r"<answer>(.*?)</answer>", re.S)
_LETTER = re.compile(r"^\s*[\[(]?([A-Za-z])[\])]?\s*(?:[:.)\-]\s*(.*))?$", re.S)


@dataclass(frozen=True)
class RationaleAnswer:
    rationale: str
    letter: str
    entity: str


def parse_rationale_answer(reply: str, mcq: McqItem) -> RationaleAnswer:
    """Read ``<think>`` and ``<answer>letter: entity</answer>``; the letter
    decides, the entity text is replaced by that option's surface."""
    answer = _ANSWER.search(reply)
    if answer is None:
        raise ParseError("reply lacks an <answer>...</answer> pair")
    m = _LETTER.match(answer.group(1).strip())
    if m is None:
        raise ParseError(f"answer {answer.group(1).strip()!r} is not in 'letter: entity' form")
    letter = m.group(1).upper()
    try:
        cand = mcq.option(letter)
    except KeyError:
        raise InvalidOptionError(f"letter {letter} is not among the options") from None
    think = _THINK.search(reply)
    return RationaleAnswer(think.group(1).strip() if think else "", letter, cand.surface)


@dataclass(frozen=True)
class Selection:
    letter: str
    candidate: Candidate
    rationale: str
    fallback: bool = False
    attempts: int = 1


def select_entity(
    backend: LlmBackend,
    mcq: McqItem,
    fewshots: Sequence[AugmentedSample] = (),
    retries: int = 2,
    key: str = "",
    temperature: float = 0.0,
    max_tokens: int = 512,
) -> Selection:
    """One gate decision.  Malformed or out-of-range replies are retried;
    after ``retries`` extra attempts the highest-score option is used.
    Backend errors propagate."""
    if retries < 0:
        raise ValueError("retries must be nonnegative")
    request = ChatRequest.user(render_mcq_prompt(mcq, fewshots), temperature, max_tokens)
    task = McqTask(key, mcq)
    for attempt in range(1, retries + 2):
        reply = backend.complete(request, task)
        try:
            ans = parse_rationale_answer(reply, mcq)
        except ReplyError:
            continue
        return Selection(ans.letter, mcq.option(ans.letter), ans.rationale, False, attempt)
    letter, cand = argmax_option(mcq.options)
    return Selection(letter, cand, FALLBACK_RATIONALE, True, retries + 1)


# --------------------------------------------------------------------------
# rationale synthesis


@dataclass(frozen=True)
class RationaleItem:
    sample: Sample
    candidates: tuple[Candidate, ...]
    span: EntitySpan
    key: str = ""


def answer_letter(sample: Sample, mcq: McqItem) -> str | None:
    """The option naming the gold entity, else the first whose surface
    occurs as whole words in the reference."""
    if sample.gold_entities:
        golds = {_fold(g) for g in sample.gold_entities}
        for l, c in mcq.options:
            if _fold(c.surface) in golds:
                return l
    ref = f" {_fold(sample.reference)} "
    for l, c in mcq.options:
        if f" {_fold(c.surface)} " in ref:
            return l
    return None


def render_rationale_prompt(mcq: McqItem, letter: str) -> str:
    return load_template("rationale").format(
        input=mcq.input_block(), answer=f"{letter}: {mcq.option(letter).surface}"
    )


def _synthesize_one(generator: LlmBackend, item: RationaleItem, retries: int, max_options: int) -> AugmentedSample:
    options = prepare_options(item.candidates, max_options)
    cloze = make_cloze(item.sample.h1, item.span)
    if not options:
        return AugmentedSample(item.sample, (), None, cloze)
    mcq = make_mcq(cloze, options)
    letter = answer_letter(item.sample, mcq)
    if letter is None:
        return AugmentedSample(item.sample, options, None, cloze)
    request = ChatRequest.user(render_rationale_prompt(mcq, letter))
    task = RationaleTask(item.key or f"{item.sample.id}/0/rationale", mcq, letter)
    for _ in range(retries + 1):
        try:
            reply = generator.complete(request, task).strip()
            ans = parse_rationale_answer(reply, mcq)
        except (BackendError, ReplyError):
            continue
        if ans.letter == letter and all(t in reply for t in ("<think>", "</think>")):
            return AugmentedSample(item.sample, options, reply, cloze)
    return AugmentedSample(item.sample, options, None, cloze)


def synthesize_rationales(
    generator: LlmBackend,
    items: Sequence[RationaleItem],
    retries: int = 2,
    jobs: int = 1,
    max_options: int = MAX_OPTIONS,
) -> list[AugmentedSample]:
    """Generate a tagged rationale for each item's known answer.

    Output order follows input order.  Items whose answer is not among the
    options, or whose generation keeps failing, come back with
    ``rationale=None``.
    """
    def one(item):
        return _synthesize_one(generator, item, retries, max_options)

    if jobs <= 1:
        return [one(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, items))
