"""Exact top-k phonetic retrieval over a named-entity gazetteer.

Records are grouped into bands by segment count and carry a bag-of-segments
count signature.  A query walks bands in order of their best possible
similarity, and within a band discards every record whose lower-bound
distance already rules it out of the current top-k, before running the
exact dynamic program on what is left.  The lower bound for a record of
length ``L`` against a query of length ``m`` is::

    indel * |L - m| + min(min_sub, 2 * indel) * min(excess_query, excess_record)

where ``excess`` counts segments of one side that cannot be matched
identically on the other.  Pruning is therefore lossless: results equal a
linear scan, including the tie order (PS descending, then surface
ascending).

Index file layout (little-endian)::

    b"DRGC" | u32 version | u32 section count
    section := 4-byte tag | u64 payload length | payload
    INVT  feature-table digest (32 bytes sha256), u32 n_segments
    RECS  u32 n, then for surface/definition/source: u64 offsets[n+1] + utf-8 blob,
          then ipa: u64 offsets[n+1] + u8 segment codes
    BAND  u32 n_bands, per band: u16 length, u32 count, u32 ids[count]
    SIGN  u32 n, u16 n_segments, u8 counts[n * n_segments]
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .phonetics import (
    DEFAULT_COSTS,
    EditCosts,
    IpaString,
    batch_distance_units,
    feature_table,
    phonemize,
    similarity_from_units,
)

MAGIC = b"DRGC"
FORMAT_VERSION = 1
_PRUNE_EPS = 1e-9
_CHUNK = 4096
_FIRST_CHUNK = 256


class IndexFormatError(ValueError):
    pass


@dataclass(frozen=True)
class NamedEntityRecord:
    surface: str
    ipa: IpaString
    definition: str = ""
    source: str = ""

    def __post_init__(self):
        if not self.surface.strip():
            raise ValueError("named entity surface must be nonempty")
        if "\n" in self.definition or "\r" in self.definition:
            raise ValueError(f"definition of {self.surface!r} contains a newline")


@dataclass(frozen=True)
class Candidate:
    record: NamedEntityRecord
    ps: float

    @property
    def surface(self) -> str:
        return self.record.surface

    @property
    def definition(self) -> str:
        return self.record.definition


@dataclass
class _Band:
    length: int
    ids: np.ndarray  # int64 record ids
    codes: np.ndarray  # (count, length) uint8


@dataclass
class PhoneticIndex:
    records: tuple[NamedEntityRecord, ...]
    bands: dict[int, _Band]
    signatures: np.ndarray  # (n, S) uint8
    costs: EditCosts = DEFAULT_COSTS
    _surface_rank: np.ndarray = field(init=False, repr=False)
    _by_surface: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        order = sorted(range(len(self.records)), key=lambda i: self.records[i].surface)
        rank = np.empty(len(self.records), dtype=np.int64)
        rank[order] = np.arange(len(self.records))
        self._surface_rank = rank
        self._by_surface = {r.surface.casefold(): i for i, r in enumerate(self.records)}

    def __len__(self) -> int:
        return len(self.records)

    def lookup(self, surface: str) -> NamedEntityRecord | None:
        """Case-insensitive exact surface lookup."""
        i = self._by_surface.get(surface.strip().casefold())
        return None if i is None else self.records[i]

    def surfaces(self) -> list[str]:
        return [r.surface for r in self.records]


def _clean_definition(text: str | None) -> str:
    return " ".join((text or "").split())


def build_index(records: Iterable, costs: EditCosts = DEFAULT_COSTS) -> PhoneticIndex:
    """Build an index from records, dicts, or ``(surface, definition, source)`` tuples.

    Surfaces are deduplicated case-insensitively: the first spelling wins and
    the first nonempty definition is kept.
    """
    merged: dict[str, list[str]] = {}
    for item in records:
        if isinstance(item, NamedEntityRecord):
            surface, definition, source = item.surface, item.definition, item.source
        elif isinstance(item, Mapping):
            surface, definition, source = item["surface"], item.get("definition"), item.get("source")
        else:
            surface, definition, source = (tuple(item) + (None, None))[:3]
        surface = " ".join(str(surface).split())
        if not surface:
            continue
        key = surface.casefold()
        definition = _clean_definition(definition)
        if key not in merged:
            merged[key] = [surface, definition, source or ""]
        elif not merged[key][1] and definition:
            merged[key][1] = definition
    if not merged:
        raise ValueError("empty gazetteer")
    recs = tuple(
        NamedEntityRecord(surface=s, ipa=phonemize(s), definition=d, source=src)
        for s, d, src in merged.values()
    )
    return _assemble(recs, [r.ipa.codes() for r in recs], costs)


def _assemble(recs, codes_list, costs, signatures=None) -> PhoneticIndex:
    n_seg = len(feature_table().segments)
    by_len: dict[int, list[int]] = {}
    for i, c in enumerate(codes_list):
        by_len.setdefault(len(c), []).append(i)
    bands = {}
    for length, ids in sorted(by_len.items()):
        mat = np.zeros((len(ids), length), dtype=np.uint8)
        for row, i in enumerate(ids):
            mat[row] = codes_list[i]
        bands[length] = _Band(length, np.asarray(ids, dtype=np.int64), mat)
    if signatures is None:
        signatures = np.zeros((len(recs), n_seg), dtype=np.uint8)
        for i, c in enumerate(codes_list):
            counts = np.bincount(c, minlength=n_seg)
            # a saturated count would break the lower bound
            if counts.max(initial=0) > 255:
                raise ValueError(f"surface {recs[i].surface[:40]!r} repeats a segment more than 255 times")
            signatures[i] = counts
    return PhoneticIndex(recs, bands, signatures, costs)


def read_gazetteer(path: str | Path) -> Iterator[tuple[str, str, str]]:
    """Yield ``(surface, definition, source)`` from a JSONL gazetteer."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                surface = obj["surface"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}: line {lineno}: bad gazetteer entry ({exc})") from None
            if not isinstance(surface, str):
                raise ValueError(f"{path}: line {lineno}: surface must be a string")
            yield surface, obj.get("definition") or "", obj.get("source") or ""


# --------------------------------------------------------------------------
# retrieval


def retrieve_topk(index: PhoneticIndex, query: IpaString, k: int) -> list[Candidate]:
    if not len(query):
        raise ValueError("empty phonetic query")
    if k < 1:
        raise ValueError("k must be positive")
    k = min(k, len(index))
    table = feature_table()
    costs = index.costs
    indel = costs.indel_units
    lb_sub = min(table.min_substitution_units(), 2 * indel)
    q = query.codes()
    m = len(q)
    qcounts = np.bincount(q, minlength=len(table.segments)).astype(np.int64)

    def band_bound(length: int) -> float:
        return float(similarity_from_units(indel * abs(length - m), length, m, costs))

    best_ids = np.empty(0, dtype=np.int64)
    best_ps = np.empty(0, dtype=np.float64)

    def threshold() -> float:
        return best_ps[k - 1] - _PRUNE_EPS if len(best_ps) >= k else -np.inf

    for length in sorted(index.bands, key=lambda L: (-band_bound(L), L)):
        if band_bound(length) < threshold():
            break
        band = index.bands[length]
        sig = index.signatures[band.ids].astype(np.int64)
        common = np.minimum(sig, qcounts).sum(axis=1)
        lb = indel * abs(length - m) + lb_sub * np.minimum(m - common, length - common)
        ub = similarity_from_units(lb, length, m, costs)
        order = np.argsort(-ub, kind="stable")
        start, size = 0, _FIRST_CHUNK
        while start < len(order):
            sel = order[start:start + size]
            start, size = start + size, min(size * 4, _CHUNK)
            sel = sel[ub[sel] >= threshold()]
            if not len(sel):
                break  # ub is sorted, later chunks are no better
            units = batch_distance_units(q, band.codes[sel], indel)
            ps = similarity_from_units(units, length, m, costs)
            ids = np.concatenate([best_ids, band.ids[sel]])
            pss = np.concatenate([best_ps, ps])
            top = np.lexsort((index._surface_rank[ids], -pss))[:k]
            best_ids, best_ps = ids[top], pss[top]
    return [Candidate(index.records[i], float(p)) for i, p in zip(best_ids, best_ps)]


# --------------------------------------------------------------------------
# persistence


def _table_digest() -> bytes:
    t = feature_table()
    blob = "\n".join(t.segments).encode() + t.vectors.tobytes()
    return hashlib.sha256(blob).digest()


def _pack_strings(values: list[str]) -> bytes:
    blobs = [v.encode("utf-8") for v in values]
    offsets = np.zeros(len(blobs) + 1, dtype="<u8")
    offsets[1:] = np.cumsum([len(b) for b in blobs], dtype=np.uint64)
    return offsets.tobytes() + b"".join(blobs)


def save_index(index: PhoneticIndex, path: str | Path) -> None:
    n = len(index)
    table = feature_table()
    sections = []
    sections.append((b"INVT", _table_digest() + struct.pack("<I", len(table.segments))))
    recs = struct.pack("<I", n)
    recs += _pack_strings([r.surface for r in index.records])
    recs += _pack_strings([r.definition for r in index.records])
    recs += _pack_strings([r.source for r in index.records])
    codes = [r.ipa.codes() for r in index.records]
    offsets = np.zeros(n + 1, dtype="<u8")
    offsets[1:] = np.cumsum([len(c) for c in codes], dtype=np.uint64)
    recs += offsets.tobytes() + b"".join(c.tobytes() for c in codes)
    sections.append((b"RECS", recs))
    band = struct.pack("<I", len(index.bands))
    for length, b in sorted(index.bands.items()):
        band += struct.pack("<HI", length, len(b.ids)) + b.ids.astype("<u4").tobytes()
    sections.append((b"BAND", band))
    sig = struct.pack("<IH", *index.signatures.shape) + index.signatures.astype(np.uint8).tobytes()
    sections.append((b"SIGN", sig))
    out = MAGIC + struct.pack("<II", FORMAT_VERSION, len(sections))
    for tag, payload in sections:
        out += tag + struct.pack("<Q", len(payload)) + payload
    Path(path).write_bytes(out)


class _Reader:
    def __init__(self, buf: bytes, what: str):
        self.buf, self.pos, self.what = buf, 0, what

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.buf):
            raise IndexFormatError(f"truncated index file while reading {self.what}")
        chunk = self.buf[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt)

    def strings(self, n: int) -> list[str]:
        offsets = self.array("<u8", n + 1).astype(np.int64)
        blob = self.take(int(offsets[-1]))
        return [blob[offsets[i]:offsets[i + 1]].decode("utf-8") for i in range(n)]


def load_index(path: str | Path, costs: EditCosts = DEFAULT_COSTS) -> PhoneticIndex:
    data = Path(path).read_bytes()
    if not data:
        raise IndexFormatError(f"{path}: empty index file")
    head = _Reader(data, "header")
    if data[:4] != MAGIC:
        raise IndexFormatError(f"{path}: bad magic bytes {data[:4]!r}, not an index file")
    head.pos = 4
    version, n_sections = head.unpack("<II")
    if version != FORMAT_VERSION:
        raise IndexFormatError(f"{path}: unsupported index format version {version} (expected {FORMAT_VERSION})")
    sections: dict[bytes, bytes] = {}
    for _ in range(n_sections):
        tag = head.take(4)
        (size,) = head.unpack("<Q")
        sections[tag] = head.take(size)
    missing = {b"INVT", b"RECS", b"BAND", b"SIGN"} - set(sections)
    if missing:
        raise IndexFormatError(f"{path}: missing sections {sorted(m.decode() for m in missing)}")

    table = feature_table()
    inv = _Reader(sections[b"INVT"], "inventory")
    if inv.take(32) != _table_digest() or inv.unpack("<I")[0] != len(table.segments):
        raise IndexFormatError(f"{path}: index was built with a different feature table")

    r = _Reader(sections[b"RECS"], "records")
    (n,) = r.unpack("<I")
    surfaces, definitions, sources = r.strings(n), r.strings(n), r.strings(n)
    offsets = r.array("<u8", n + 1).astype(np.int64)
    flat = r.array("<u1", int(offsets[-1]))
    if flat.size and int(flat.max()) >= len(table.segments):
        raise IndexFormatError(f"{path}: segment code out of range")
    codes = [flat[offsets[i]:offsets[i + 1]].astype(np.uint8) for i in range(n)]
    recs = tuple(
        NamedEntityRecord(surfaces[i], IpaString(tuple(table.segments[c] for c in codes[i])), definitions[i], sources[i])
        for i in range(n)
    )

    b = _Reader(sections[b"BAND"], "bands")
    (n_bands,) = b.unpack("<I")
    seen = np.zeros(n, dtype=np.int64)
    for _ in range(n_bands):
        length, count = b.unpack("<HI")
        ids = b.array("<u4", count).astype(np.int64)
        if ids.size and (ids.max() >= n or any(len(codes[i]) != length for i in ids)):
            raise IndexFormatError(f"{path}: band {length} is inconsistent with the records")
        seen[ids] += 1
    if not np.all(seen == 1):
        raise IndexFormatError(f"{path}: every record must appear in exactly one band")

    s = _Reader(sections[b"SIGN"], "signatures")
    rows, cols = s.unpack("<IH")
    if rows != n or cols != len(table.segments):
        raise IndexFormatError(f"{path}: signature table has shape ({rows}, {cols})")
    sig = s.array("<u1", rows * cols).reshape(rows, cols).copy()
    return _assemble(recs, codes, costs, signatures=sig)
