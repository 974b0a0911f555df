"""``nefix`` command line.

Every flag can also be set from an INI file passed with ``--config``:
section ``[<subcommand>]`` (or ``[common]`` for keys shared by several
subcommands), key = flag name without the leading dashes.  Flags given on
the command line win over the file.

Exit codes: 0 success, 1 usage error, 2 data error, 3 backend/transport error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .corpus import (
    DatasetError,
    NoiseConfig,
    load_augmented,
    load_dataset,
    mention_surfaces,
    synth_corpus,
    synth_gazetteer,
    write_augmented,
    write_dataset,
    write_jsonl,
)
from .correction import MODES, Corrector, RunConfig, RunRecord, rationale_items
from .denoising import synthesize_rationales
from .filtering import METHODS, FilterSpec, candidate_recall_precision
from .index import IndexFormatError, build_index, load_index, read_gazetteer, retrieve_topk, save_index
from .llm import BACKEND_KINDS, DEFAULT_KEY_ENV, BackendError, BackendSpec, RecordingBackend, make_backend
from .metrics import MetricUndefined, assemble_report, corpus_wer, ne_hits, write_reports
from .phonetics import IpaString, UnknownSegmentError, phonemize
from .tagging import GazetteerTagger, RemoteTagger, TaggerError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BACKEND = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# parser


def _backend_flags(p):
    p.add_argument("--backend", choices=BACKEND_KINDS, default="heuristic",
                   help="text-generation backend (default: heuristic)")
    p.add_argument("--endpoint", help="chat-completions URL (http backend)")
    p.add_argument("--model", help="model name (http backend)")
    p.add_argument("--transcript", help="reply transcript JSONL (scripted backend)")
    p.add_argument("--api-key-env", default=DEFAULT_KEY_ENV,
                   help=f"environment variable holding the API key (default: {DEFAULT_KEY_ENV})")
    p.add_argument("--timeout", type=float, default=60.0, help="request timeout in seconds (default: 60)")
    p.add_argument("--max-attempts", type=int, default=4, help="attempts per request incl. retries (default: 4)")
    p.add_argument("--max-in-flight", type=int, default=4, help="concurrent requests per backend (default: 4)")
    p.add_argument("--record", help="write every backend reply to this transcript JSONL")


def _gec_backend_flags(p):
    p.add_argument("--gec-backend", choices=BACKEND_KINDS,
                   help="separate backend for the correction stage (default: same as --backend)")
    p.add_argument("--gec-endpoint", help="chat-completions URL for the correction stage (default: --endpoint)")
    p.add_argument("--gec-model", help="model name for the correction stage (default: --model)")
    p.add_argument("--gec-transcript", help="reply transcript for the correction stage (default: --transcript)")


def _tagger_flags(p):
    p.add_argument("--tagger", choices=("gazetteer", "remote"), default="gazetteer",
                   help="mention tagger: gazetteer surfaces (+ dataset mentions) or an HTTP service (default: gazetteer)")
    p.add_argument("--tagger-endpoint", help="URL of the remote tagging service")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nefix", description="Named-entity correction of ASR n-best lists with phonetic retrieval.")
    parser.add_argument("--version", action="version", version=f"nefix {__version__}")
    parser.add_argument("--config", help="INI file with default flag values")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("build-index", help="build a phonetic index from a JSONL gazetteer")
    p.add_argument("--gazetteer", help="JSONL with surface/definition/source per line")
    p.add_argument("--out", help="index file to write")

    p = sub.add_parser("synth-gazetteer", help="generate a synthetic JSONL gazetteer")
    p.add_argument("--n", type=int, default=10000, help="number of entities (default: 10000)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.add_argument("--out", help="gazetteer JSONL to write")

    p = sub.add_parser("retrieve", help="print the top-k phonetically closest entities")
    p.add_argument("--index", help="index file")
    p.add_argument("--query", help="query text (or IPA with --ipa)")
    p.add_argument("--ipa", action="store_true", default=False, help="treat the query as space-separated IPA")
    p.add_argument("--k", type=int, default=10, help="number of results (default: 10)")

    p = sub.add_parser("synth-corpus", help="generate a synthetic 5-best dataset")
    p.add_argument("--gazetteer", help="gazetteer JSONL")
    p.add_argument("--n", type=int, default=500, help="number of samples (default: 500)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.add_argument("--max-edits", type=int, default=2, help="max phoneme edits per mention (default: 2)")
    p.add_argument("--min-edits", type=int, default=0, help="min phoneme edits per mention (default: 0)")
    p.add_argument("--word-sub-prob", type=float, default=0.0, help="chance of a non-entity word error (default: 0)")
    p.add_argument("--out", help="dataset JSONL to write")

    p = sub.add_parser("synth-rationales", help="generate tagged rationales for a few-shot pool")
    p.add_argument("--dataset", help="dataset JSONL")
    p.add_argument("--index", help="index file")
    p.add_argument("--k", type=int, default=10, help="retrieval depth (default: 10)")
    p.add_argument("--retries", type=int, default=2, help="extra attempts per sample (default: 2)")
    p.add_argument("--jobs", type=int, default=1, help="worker threads (default: 1)")
    p.add_argument("--out", help="augmented JSONL to write")
    _backend_flags(p)
    _tagger_flags(p)

    p = sub.add_parser("run", help="run one correction mode over a dataset")
    _run_flags(p)
    p.add_argument("--out", help="run JSONL to write")

    p = sub.add_parser("filter", help="apply a static filter to augmented candidates")
    p.add_argument("--augmented", help="augmented JSONL")
    p.add_argument("--method", choices=METHODS, help="static filter: topk, threshold or std")
    p.add_argument("--k", type=int, help="keep the K best candidates (topk)")
    p.add_argument("--theta", type=float, help="minimum phonetic score (threshold)")
    p.add_argument("--sigma", type=float, help="std multiplier above the mean score (std)")
    p.add_argument("--out", help="filtered augmented JSONL to write")

    p = sub.add_parser("eval", help="score run files against their dataset")
    p.add_argument("--run", action="append", help="run JSONL (repeat for several methods)")
    p.add_argument("--dataset", help="dataset JSONL")
    p.add_argument("--index", help="index file (its surfaces drive the tagger)")
    p.add_argument("--out", help="report JSON to write")
    p.add_argument("--csv", help="CSV to write (default: report path with .csv)")

    p = sub.add_parser("sweep-fewshots", help="WER as a function of the few-shot count")
    _run_flags(p)
    p.add_argument("--t", default="0..5", help="few-shot counts: 'a..b' or comma list (default: 0..5)")
    p.add_argument("--out", help="CSV to write (t,wer,ne_hit)")
    return parser


def _run_flags(p):
    p.add_argument("--mode", choices=MODES, default="deragec", help="pipeline mode (default: deragec)")
    p.add_argument("--dataset", help="dataset JSONL")
    p.add_argument("--index", help="index file")
    p.add_argument("--pool", help="augmented JSONL with rationales used as few-shot examples")
    p.add_argument("--k", type=int, default=10, help="retrieval depth (default: 10)")
    p.add_argument("--fewshots", type=int, default=5, help="few-shot examples per prompt (default: 5)")
    p.add_argument("--seed", type=int, default=0, help="few-shot sampling seed (default: 0)")
    p.add_argument("--max-options", type=int, default=26, help="option cap for the selection prompt (default: 26)")
    p.add_argument("--retries", type=int, default=2, help="extra selection attempts on bad replies (default: 2)")
    p.add_argument("--jobs", type=int, default=1, help="worker threads (default: 1)")
    p.add_argument("--filter-method", choices=METHODS, help="static filter on retrieved candidates")
    p.add_argument("--filter-k", type=int, help="K for --filter-method topk")
    p.add_argument("--theta", type=float, help="threshold for --filter-method threshold")
    p.add_argument("--sigma", type=float, help="multiplier for --filter-method std")
    _backend_flags(p)
    _gec_backend_flags(p)
    _tagger_flags(p)


# --------------------------------------------------------------------------
# config


def _subparsers(parser) -> dict[str, argparse.ArgumentParser]:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return dict(action.choices)
    return {}


def _apply_config(parser, path: str, command: str) -> None:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise UsageError(f"bad config {path}: {exc}") from None
    subs = _subparsers(parser)
    for section in cp.sections():
        if section != "common" and section not in subs:
            raise UsageError(f"config {path}: unknown section [{section}]")
    all_dests = {a.dest for p in subs.values() for a in p._actions}
    for section in cp.sections():
        for key in cp[section]:
            dest = key.replace("-", "_")
            if section == "common":
                if dest not in all_dests:
                    raise UsageError(f"config {path}: unknown key {key!r} in [common]")
            elif dest not in {a.dest for a in subs[section]._actions}:
                raise UsageError(f"config {path}: unknown key {key!r} in [{section}]")
    target = subs[command]
    actions = {a.dest: a for a in target._actions}
    values = {}
    for section in ("common", command):
        if not cp.has_section(section):
            continue
        for key, raw in cp[section].items():
            dest = key.replace("-", "_")
            action = actions.get(dest)
            if action is None:
                continue  # a [common] key belonging to another subcommand
            values[dest] = _convert(action, raw, key)
    target.set_defaults(**values)


def _convert(action: argparse.Action, raw: str, key: str):
    if isinstance(action, argparse._StoreTrueAction):
        if raw.strip().lower() in ("1", "true", "yes", "on"):
            return True
        if raw.strip().lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"config key {key!r}: expected a boolean, got {raw!r}")
    if isinstance(action, argparse._AppendAction):
        return [v for v in raw.split() if v]
    try:
        value = action.type(raw) if action.type else raw
    except ValueError:
        raise UsageError(f"config key {key!r}: bad value {raw!r}") from None
    if action.choices is not None and value not in action.choices:
        raise UsageError(f"config key {key!r}: {value!r} not in {sorted(action.choices)}")
    return value


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    pre = parser.parse_args(argv)
    if pre.command is None:
        raise UsageError("nefix: a subcommand is required (see --help)")
    if pre.config:
        parser = build_parser()
        _apply_config(parser, pre.config, pre.command)
        return parser.parse_args(argv)
    return pre


def _need(args, *names: str) -> None:
    missing = [n for n in names if getattr(args, n.replace("-", "_"), None) in (None, [])]
    if missing:
        raise UsageError(f"{args.command}: missing " + ", ".join(f"--{n}" for n in missing))


# --------------------------------------------------------------------------
# helpers


def _backend_spec(args, stage: str = "") -> BackendSpec:
    def get(name):
        value = getattr(args, f"gec_{name}") if stage == "gec" else None
        return value if value is not None else getattr(args, name)

    try:
        return BackendSpec(get("backend"), get("endpoint"), get("model"), args.api_key_env, get("transcript"),
                           args.timeout, args.max_attempts, args.max_in_flight)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _tagger(args, index, samples=()):
    if args.tagger == "remote":
        if not args.tagger_endpoint:
            raise UsageError("--tagger remote needs --tagger-endpoint")
        return RemoteTagger(args.tagger_endpoint)
    return GazetteerTagger(index.surfaces()).extended(mention_surfaces(samples))


def _filter_from(method, k, theta, sigma) -> FilterSpec | None:
    if method is None:
        if any(v is not None for v in (k, theta, sigma)):
            raise UsageError("filter parameters given without a filter method")
        return None
    try:
        return FilterSpec(method, k, theta, sigma)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _run_config(args, mode=None, fewshots=None) -> RunConfig:
    try:
        return RunConfig(
            mode=mode or args.mode, k=args.k,
            fewshot_count=args.fewshots if fewshots is None else fewshots,
            seed=args.seed,
            filter=_filter_from(args.filter_method, args.filter_k, args.theta, args.sigma),
            max_options=args.max_options, retries=args.retries,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_backends(args):
    backend = make_backend(_backend_spec(args))
    gec = make_backend(_backend_spec(args, "gec")) if args.gec_backend else None
    if args.record:
        backend = RecordingBackend(backend)
        if gec is not None:
            gec = RecordingBackend(gec)
    return backend, gec


def _write_recording(args, *backends) -> None:
    if not args.record:
        return
    merged = RecordingBackend(None)
    for b in backends:
        if isinstance(b, RecordingBackend):
            merged.records.update(b.records)
    merged.write(args.record)


def _parse_t(spec: str) -> list[int]:
    try:
        if ".." in spec:
            lo, hi = spec.split("..")
            values = list(range(int(lo), int(hi) + 1))
        else:
            values = [int(v) for v in spec.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad --t value {spec!r}") from None
    if not values or min(values) < 0:
        raise UsageError(f"bad --t value {spec!r}")
    return values


# --------------------------------------------------------------------------
# commands


def cmd_build_index(args) -> int:
    _need(args, "gazetteer", "out")
    index = build_index(read_gazetteer(args.gazetteer))
    save_index(index, args.out)
    print(f"indexed {len(index)} entities -> {args.out}")
    return EXIT_OK


def cmd_synth_gazetteer(args) -> int:
    _need(args, "out")
    recs = synth_gazetteer(args.n, args.seed)
    write_jsonl(args.out, ({"surface": r.surface, "definition": r.definition, "source": r.source} for r in recs))
    print(f"wrote {len(recs)} entities -> {args.out}")
    return EXIT_OK


def cmd_retrieve(args) -> int:
    _need(args, "index", "query")
    index = load_index(args.index)
    query = IpaString.parse(args.query) if args.ipa else phonemize(args.query)
    if not len(query):
        raise UsageError("query has no pronounceable content")
    for rank, c in enumerate(retrieve_topk(index, query, args.k), 1):
        print(f"{rank}\t{c.ps:.2f}\t{c.surface}\t{c.definition}")
    return EXIT_OK


def cmd_synth_corpus(args) -> int:
    _need(args, "gazetteer", "out")
    recs = build_index(read_gazetteer(args.gazetteer)).records
    try:
        noise = NoiseConfig(args.max_edits, args.min_edits, args.word_sub_prob)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    samples = synth_corpus(recs, args.n, noise, args.seed)
    write_dataset(args.out, samples)
    print(f"wrote {len(samples)} samples -> {args.out}")
    return EXIT_OK


def cmd_synth_rationales(args) -> int:
    _need(args, "dataset", "index", "out")
    samples = load_dataset(args.dataset)
    index = load_index(args.index)
    backend = make_backend(_backend_spec(args))
    if args.record:
        backend = RecordingBackend(backend)
    items = rationale_items(samples, index, _tagger(args, index, samples), args.k)
    out = synthesize_rationales(backend, items, retries=args.retries, jobs=args.jobs)
    write_augmented(args.out, out)
    _write_recording(args, backend)
    ok = sum(a.rationale is not None for a in out)
    print(f"rationales: {ok}/{len(out)} succeeded ({len(samples) - len(items)} samples without a mention) -> {args.out}")
    return EXIT_OK


def _corrector(args, samples, mode=None, fewshots=None):
    config = _run_config(args, mode, fewshots)
    index = load_index(args.index) if args.index else None
    needs_index = config.mode in ("ragec", "deragec", "oracle")
    if needs_index and index is None:
        raise UsageError(f"mode {config.mode} needs --index")
    tagger = _tagger(args, index, samples) if index is not None else None
    pool = load_augmented(args.pool) if args.pool else []
    backend, gec = _load_backends(args) if config.mode != "asr" else (None, None)
    return Corrector(config, backend, index, tagger, pool, gec), backend, gec


def cmd_run(args) -> int:
    _need(args, "dataset", "out")
    samples = load_dataset(args.dataset)
    corrector, backend, gec = _corrector(args, samples)
    records = corrector.run(samples, jobs=args.jobs)
    write_jsonl(args.out, (r.to_json() for r in records))
    _write_recording(args, backend, gec)
    n_fb = sum(bool(r.fallbacks) for r in records)
    print(f"{corrector.config.mode}: {len(records)} samples, {n_fb} with fallbacks -> {args.out}")
    return EXIT_OK


def cmd_filter(args) -> int:
    _need(args, "augmented", "method", "out")
    spec = _filter_from(args.method, args.k, args.theta, args.sigma)
    items = load_augmented(args.augmented)
    kept = [type(a)(a.sample, spec.apply(list(a.candidates)), a.rationale, a.cloze) for a in items]
    golds = []
    for a in kept:
        if not a.sample.gold_entities:
            raise DatasetError(args.augmented, 0, f"sample {a.sample.id} has no gold_entities")
        golds.append(a.sample.gold_entities)
    recall, precision = candidate_recall_precision([a.candidates for a in kept], golds)
    write_augmented(args.out, kept)
    print(f"recall={recall:.4f} precision={precision:.4f} samples={len(kept)}")
    return EXIT_OK


def _load_run(path) -> list[RunRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(RunRecord.from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetError(path, lineno, f"bad run record ({exc})") from None
    return out


def cmd_eval(args) -> int:
    _need(args, "run", "dataset", "index", "out")
    samples = load_dataset(args.dataset)
    tagger = GazetteerTagger(load_index(args.index).surfaces())
    reports = [assemble_report(_load_run(p), samples, tagger) for p in args.run]
    csv_path = args.csv or str(Path(args.out).with_suffix(".csv"))
    write_reports(reports, args.out, csv_path)
    for r in reports:
        print(f"{r.method}: wer={r.wer:.4f} ne_hit={r.ne_hit_ratio:.4f} recall={r.candidate_recall:.4f} "
              f"precision={r.candidate_precision:.4f}")
    return EXIT_OK


def cmd_sweep_fewshots(args) -> int:
    _need(args, "dataset", "out")
    samples = load_dataset(args.dataset)
    rows = ["t,wer,ne_hit"]
    eval_tagger = None
    for t in _parse_t(args.t):
        corrector, _, _ = _corrector(args, samples, fewshots=t)
        if eval_tagger is None:
            eval_tagger = GazetteerTagger(corrector.index.surfaces()) if corrector.index else corrector.tagger
        records = corrector.run(samples, jobs=args.jobs)
        outs = [r.transcript for r in records]
        w = corpus_wer([s.reference for s in samples], outs).value
        gold = [s.gold_entities for s in samples] if all(s.gold_entities for s in samples) else None
        hit = ne_hits([s.reference for s in samples], outs, eval_tagger, gold).ratio if eval_tagger else float("nan")
        rows.append(f"{t},{w!r},{hit!r}")
        print(f"t={t}: wer={w:.4f} ne_hit={hit:.4f}")
    Path(args.out).write_text("\n".join(rows) + "\n", encoding="utf-8")
    return EXIT_OK


COMMANDS = {
    "build-index": cmd_build_index,
    "synth-gazetteer": cmd_synth_gazetteer,
    "retrieve": cmd_retrieve,
    "synth-corpus": cmd_synth_corpus,
    "synth-rationales": cmd_synth_rationales,
    "run": cmd_run,
    "filter": cmd_filter,
    "eval": cmd_eval,
    "sweep-fewshots": cmd_sweep_fewshots,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BackendError, TaggerError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (DatasetError, IndexFormatError, UnknownSegmentError, MetricUndefined, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
