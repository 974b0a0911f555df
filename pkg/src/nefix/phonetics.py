"""Text to IPA conversion and articulatory-feature edit distance.

Two embedded tables drive everything here:

* ``data/lexicon.tsv.gz`` maps lowercase words to space-separated IPA
  segments (assembled from CMUdict by ``scripts/build_lexicon.py``);
* ``data/features.tsv`` gives every segment a ternary vector over 22
  articulatory features.

Substitution cost is the normalized Hamming distance between feature
vectors.  Internally all distances are accumulated in *feature units*
(one unit per differing feature, ``F`` units per unit of cost) so the
dynamic program sums integers whenever the indel cost is a multiple of
``1/F``.  That keeps results bit-identical between the scalar path, the
batched numpy path and any alignment order.
"""

from __future__ import annotations

import gzip
import re
import unicodedata
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "EditCosts",
    "FeatureTable",
    "IpaString",
    "UnknownSegmentError",
    "feature_edit_distance",
    "feature_table",
    "letters_to_sound",
    "load_lexicon",
    "phonemize",
    "phonetic_similarity",
    "respell",
    "segment_features",
    "substitution_cost",
]


class UnknownSegmentError(ValueError):
    """Raised for an IPA symbol that is not in the feature table."""

    def __init__(self, symbol: str):
        super().__init__(f"unknown IPA segment {symbol!r}")
        self.symbol = symbol


# --------------------------------------------------------------------------
# feature table

_TERNARY = {"-": -1, "0": 0, "+": 1}


@dataclass(frozen=True)
class FeatureTable:
    features: tuple[str, ...]
    segments: tuple[str, ...]
    vectors: np.ndarray  # (S, F) int8 in {-1, 0, 1}

    @classmethod
    def read(cls, path: str | Path) -> "FeatureTable":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read())

    @classmethod
    def parse(cls, text: str) -> "FeatureTable":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        header = lines[0].split("\t")
        features = tuple(header[1:])
        segments, rows = [], []
        for lineno, line in enumerate(lines[1:], start=2):
            cells = line.split("\t")
            if len(cells) != len(header):
                raise ValueError(f"feature table line {lineno}: expected {len(header)} cells")
            try:
                rows.append([_TERNARY[c] for c in cells[1:]])
            except KeyError as exc:
                raise ValueError(f"feature table line {lineno}: bad value {exc.args[0]!r}") from None
            segments.append(cells[0])
        if len(set(segments)) != len(segments):
            raise ValueError("feature table has duplicate segments")
        return cls(features, tuple(segments), np.asarray(rows, dtype=np.int8))

    @property
    def n_features(self) -> int:
        return len(self.features)

    def index(self, segment: str) -> int:
        try:
            return self._index[segment]
        except KeyError:
            raise UnknownSegmentError(segment) from None

    def __post_init__(self):
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.segments)})
        diff = (self.vectors[:, None, :] != self.vectors[None, :, :]).sum(axis=2)
        object.__setattr__(self, "diff_units", diff.astype(np.float64))

    def min_substitution_units(self) -> float:
        """Smallest nonzero substitution cost, in feature units."""
        d = self.diff_units
        return float(d[d > 0].min())


@lru_cache(maxsize=None)
def feature_table() -> FeatureTable:
    ref = resources.files("nefix").joinpath("data/features.tsv")
    return FeatureTable.parse(ref.read_text(encoding="utf-8"))


def segment_features(segment: str) -> tuple[int, ...]:
    table = feature_table()
    return tuple(int(v) for v in table.vectors[table.index(segment)])


def substitution_cost(x: str, y: str) -> float:
    table = feature_table()
    return table.diff_units[table.index(x), table.index(y)] / table.n_features


# --------------------------------------------------------------------------
# IPA strings

# marks removed before segmentation: stress, length, syllable breaks, ties
_STRIP_CHARS = set("ˈˌːˑ.‿͜͡ ")
_ALIASES = {"g": "ɡ", "r": "ɹ", "ʧ": "tʃ", "ʤ": "dʒ", "ɜ": "ɝ", "y": "j"}


@dataclass(frozen=True)
class IpaString:
    """An ordered sequence of IPA segments, each present in the feature table."""

    segments: tuple[str, ...] = ()

    def __post_init__(self):
        segs = tuple(self.segments)
        table = feature_table()
        for s in segs:
            table.index(s)
        object.__setattr__(self, "segments", segs)

    @classmethod
    def parse(cls, text: str) -> "IpaString":
        """Segment a raw IPA string (diacritics and stress marks dropped)."""
        table = feature_table()
        chars = [
            c for c in unicodedata.normalize("NFD", text)
            if not unicodedata.combining(c) and c not in _STRIP_CHARS
        ]
        raw = "".join(_ALIASES.get(c, c) for c in chars)
        segs: list[str] = []
        i = 0
        while i < len(raw):
            two = raw[i:i + 2]
            if len(two) == 2 and two in table._index:
                segs.append(two)
                i += 2
            elif raw[i] in table._index:
                segs.append(raw[i])
                i += 1
            else:
                raise UnknownSegmentError(raw[i])
        return cls(tuple(segs))

    def codes(self) -> np.ndarray:
        table = feature_table()
        return np.fromiter((table._index[s] for s in self.segments), dtype=np.uint8, count=len(self))

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def __str__(self) -> str:
        return "".join(self.segments)


# --------------------------------------------------------------------------
# grapheme to phoneme

# Letter-to-sound fallback for out-of-vocabulary words.  Greedy longest
# match, left to right, after collapsing doubled consonant letters.
# Context rules handled in code: "c" before e/i/y is /s/; word-final "e"
# after a consonant is silent (words longer than two letters); word-final
# "y" after a consonant is /i/.
LETTER_RULES: dict[str, tuple[str, ...]] = {
    "tch": ("tʃ",), "igh": ("a", "ɪ"), "sch": ("s", "k"),
    "ch": ("tʃ",), "sh": ("ʃ",), "th": ("θ",), "ph": ("f",), "ng": ("ŋ",),
    "ck": ("k",), "qu": ("k", "w"), "zh": ("ʒ",), "wh": ("w",), "gh": ("ɡ",),
    "kh": ("k",), "ee": ("i",), "ea": ("i",), "ie": ("i",), "oo": ("u",),
    "ou": ("a", "ʊ"), "ow": ("o", "ʊ"), "oa": ("o",), "ai": ("e", "ɪ"),
    "ay": ("e", "ɪ"), "ey": ("e", "ɪ"), "ei": ("e", "ɪ"), "oi": ("ɔ", "ɪ"),
    "oy": ("ɔ", "ɪ"), "au": ("ɔ",), "aw": ("ɔ",), "er": ("ɚ",), "ir": ("ɝ",),
    "ur": ("ɝ",), "ar": ("ɑ", "ɹ"), "or": ("ɔ", "ɹ"), "ah": ("ɑ",), "uh": ("ə",),
    "eh": ("ɛ",), "oh": ("o",), "ue": ("u",), "ew": ("u",),
    "a": ("æ",), "b": ("b",), "c": ("k",), "d": ("d",), "e": ("ɛ",), "f": ("f",),
    "g": ("ɡ",), "h": ("h",), "i": ("ɪ",), "j": ("dʒ",), "k": ("k",), "l": ("l",),
    "m": ("m",), "n": ("n",), "o": ("ɑ",), "p": ("p",), "q": ("k",), "r": ("ɹ",),
    "s": ("s",), "t": ("t",), "u": ("ʌ",), "v": ("v",), "w": ("w",), "x": ("k", "s"),
    "y": ("j",), "z": ("z",),
}
_MAX_RULE = max(map(len, LETTER_RULES))
_VOWEL_LETTERS = set("aeiouy")


def _collapse_doubles(word: str) -> str:
    out = []
    for c in word:
        if out and c == out[-1] and c not in _VOWEL_LETTERS:
            continue
        out.append(c)
    return "".join(out)


def letters_to_sound(word: str) -> tuple[str, ...]:
    """Apply the fallback rule table to one lowercase ASCII word."""
    w = _collapse_doubles("".join(c for c in word if "a" <= c <= "z"))
    out: list[str] = []
    i, n = 0, len(w)
    while i < n:
        c = w[i]
        if c == "e" and i == n - 1 and n > 2 and w[i - 1] not in _VOWEL_LETTERS:
            break
        if c == "y" and i == n - 1 and i > 0 and w[i - 1] not in _VOWEL_LETTERS:
            out.append("i")
            break
        if c == "c" and i + 1 < n and w[i + 1] in "eiy":
            out.append("s")
            i += 1
            continue
        for size in range(min(_MAX_RULE, n - i), 0, -1):
            chunk = w[i:i + size]
            if chunk in LETTER_RULES:
                out.extend(LETTER_RULES[chunk])
                i += size
                break
    return tuple(out)


# Inverse spelling, used to write phoneme sequences back as plausible
# letters.  Diphthong pairs are tried before single segments; alternatives
# are tried in order until the letters read back as the intended sounds.
SPELLING_PAIRS: dict[tuple[str, str], tuple[str, ...]] = {
    ("a", "ɪ"): ("igh",), ("a", "ʊ"): ("ou",), ("e", "ɪ"): ("ay", "ai"),
    ("o", "ʊ"): ("ow",), ("ɔ", "ɪ"): ("oy", "oi"),
}
SPELLINGS: dict[str, tuple[str, ...]] = {
    "p": ("p",), "b": ("b",), "t": ("t",), "d": ("d",), "k": ("k", "c", "ck"),
    "ɡ": ("g",), "tʃ": ("ch", "tch"), "dʒ": ("j",), "f": ("f", "ph"), "v": ("v",),
    "θ": ("th",), "ð": ("th",), "s": ("s", "c"), "z": ("z",), "ʃ": ("sh",),
    "ʒ": ("zh",), "h": ("h",), "m": ("m",), "n": ("n",), "ŋ": ("ng",), "l": ("l",),
    "ɹ": ("r",), "w": ("w",), "j": ("y",), "i": ("ee", "ea", "y"), "ɪ": ("i",),
    "e": ("ay",), "ɛ": ("e", "eh"), "æ": ("a",), "a": ("ah",), "ɑ": ("o", "ah"),
    "ɔ": ("aw", "au"), "o": ("oa", "oh"), "ʊ": ("oo",), "u": ("oo", "ue"),
    "ʌ": ("u",), "ə": ("uh",), "ɝ": ("ur", "ir"), "ɚ": ("er",),
}


def _spelling_units(segs: Sequence[str]) -> list[tuple[tuple[str, ...], tuple[str, ...]]]:
    units = []
    i = 0
    while i < len(segs):
        pair = tuple(segs[i:i + 2])
        if len(pair) == 2 and pair in SPELLING_PAIRS:
            units.append((pair, SPELLING_PAIRS[pair]))
            i += 2
        else:
            units.append(((segs[i],), SPELLINGS[segs[i]]))
            i += 1
    return units


_RESPELL_BUDGET = 2000


def respell(segments: Sequence[str]) -> str:
    """Spell a segment sequence so that, where possible, it reads back
    to the same sequence under :func:`letters_to_sound`.

    Depth-first over the spelling alternatives of each unit, pruning any
    prefix that no longer reads back correctly.  When no spelling reads
    back (e.g. doubled consonant sounds) the first alternatives are used.
    """
    units = _spelling_units(list(segments))
    if not units:
        return ""
    budget = [_RESPELL_BUDGET]

    def search(pos: int, spelled: str, target: tuple[str, ...]) -> str | None:
        sounds, options = units[pos]
        want = target + sounds
        last = pos == len(units) - 1
        for opt in options:
            budget[0] -= 1
            if budget[0] < 0:
                return None
            if last:
                if letters_to_sound(spelled + opt) == want:
                    return spelled + opt
                continue
            # a trailing "q" shields the prefix from word-final rules
            if letters_to_sound(spelled + opt + "q")[:-1] != want:
                continue
            found = search(pos + 1, spelled + opt, want)
            if found is not None:
                return found
        return None

    return search(0, "", ()) or "".join(options[0] for _, options in units)


@lru_cache(maxsize=None)
def _default_lexicon() -> dict[str, tuple[str, ...]]:
    ref = resources.files("nefix").joinpath("data/lexicon.tsv.gz")
    with ref.open("rb") as fh:
        return _parse_lexicon(gzip.decompress(fh.read()).decode("utf-8").splitlines())


def _parse_lexicon(lines: Iterable[str]) -> dict[str, tuple[str, ...]]:
    lex: dict[str, tuple[str, ...]] = {}
    for line in lines:
        if not line.strip():
            continue
        word, _, ipa = line.partition("\t")
        lex[word] = tuple(ipa.split())
    return lex


def load_lexicon(path: str | Path | None = None) -> dict[str, tuple[str, ...]]:
    """Load a ``word<TAB>segments`` lexicon; ``None`` gives the embedded one."""
    if path is None:
        return _default_lexicon()
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    lex = _parse_lexicon(raw.decode("utf-8").splitlines())
    table = feature_table()
    for word, segs in lex.items():
        for s in segs:
            if s not in table._index:
                raise UnknownSegmentError(s)
    return lex


_DIGITS = ("zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine")
_TOKEN_SPLIT = re.compile(r"[\s\-_/]+")


def tokenize_for_g2p(text: str) -> list[str]:
    """Lowercase, strip accents and punctuation; digits become digit words."""
    text = unicodedata.normalize("NFKD", text.lower())
    text = "".join(c for c in text if not unicodedata.combining(c))
    tokens: list[str] = []
    for raw in _TOKEN_SPLIT.split(text):
        word = ""
        for c in raw:
            if c.isdigit():
                if word.strip("'"):
                    tokens.append(word.strip("'"))
                word = ""
                tokens.append(_DIGITS[int(c)] if c in "0123456789" else "")
            elif ("a" <= c <= "z") or c == "'":
                word += c
        if word.strip("'"):
            tokens.append(word.strip("'"))
    return [t for t in tokens if t]


def phonemize(text: str, lexicon: Mapping[str, Sequence[str]] | None = None) -> IpaString:
    lex = _default_lexicon() if lexicon is None else lexicon
    return IpaString(_phonemize_cached(text) if lexicon is None else _phonemize(text, lex))


def _phonemize(text: str, lex: Mapping[str, Sequence[str]]) -> tuple[str, ...]:
    out: list[str] = []
    for tok in tokenize_for_g2p(text):
        pron = lex.get(tok)
        out.extend(pron if pron is not None else letters_to_sound(tok))
    return tuple(out)


@lru_cache(maxsize=1 << 16)
def _phonemize_cached(text: str) -> tuple[str, ...]:
    return _phonemize(text, _default_lexicon())


# --------------------------------------------------------------------------
# distances


@dataclass(frozen=True)
class EditCosts:
    insert_cost: float = 1.0
    delete_cost: float = 1.0

    def __post_init__(self):
        if self.insert_cost < 0 or self.delete_cost < 0:
            raise ValueError("edit costs must be nonnegative")
        if self.insert_cost != self.delete_cost:
            raise ValueError("insert_cost must equal delete_cost for a symmetric distance")

    @property
    def indel_units(self) -> float:
        return self.insert_cost * feature_table().n_features

    @property
    def normalizer_units(self) -> float:
        """Per-segment normalizer for similarity, in feature units."""
        return max(self.insert_cost, 1.0) * feature_table().n_features


DEFAULT_COSTS = EditCosts()


def distance_units(a: np.ndarray, b: np.ndarray, indel: float) -> float:
    """Scalar weighted Levenshtein over segment codes, in feature units."""
    sub = feature_table().diff_units
    prev = [j * indel for j in range(len(b) + 1)]
    for i in range(1, len(a) + 1):
        cur = [i * indel] + [0.0] * len(b)
        row = sub[a[i - 1]]
        for j in range(1, len(b) + 1):
            cur[j] = min(prev[j] + indel, cur[j - 1] + indel, prev[j - 1] + row[b[j - 1]])
        prev = cur
    return float(prev[-1])


def batch_distance_units_numpy(query: np.ndarray, records: np.ndarray, indel: float) -> np.ndarray:
    """Distances from ``query`` to every row of ``records`` (all rows one length).

    Same recurrence as :func:`distance_units`, vectorized over the record
    axis.  Used when numba is unavailable.
    """
    n, width = records.shape
    sub = feature_table().diff_units
    cols = np.ascontiguousarray(records.T)  # (width, n)
    prev = np.repeat((np.arange(width + 1, dtype=np.float64) * indel)[:, None], n, axis=1)
    cur = np.empty_like(prev)
    tmp = np.empty(n, dtype=np.float64)
    for i in range(1, len(query) + 1):
        cur[0] = i * indel
        row = sub[query[i - 1]][cols]  # (width, n)
        for j in range(1, width + 1):
            np.add(prev[j], indel, out=cur[j])
            np.add(cur[j - 1], indel, out=tmp)
            np.minimum(cur[j], tmp, out=cur[j])
            np.add(prev[j - 1], row[j - 1], out=tmp)
            np.minimum(cur[j], tmp, out=cur[j])
        prev, cur = cur, prev
    return prev[width].copy()


def _dp_rows(query, records, indel, sub):
    n, width = records.shape
    out = np.empty(n, dtype=np.float64)
    prev = np.empty(width + 1, dtype=np.float64)
    cur = np.empty(width + 1, dtype=np.float64)
    for r in range(n):
        for j in range(width + 1):
            prev[j] = j * indel
        for i in range(1, len(query) + 1):
            cur[0] = i * indel
            qi = query[i - 1]
            for j in range(1, width + 1):
                best = prev[j] + indel
                alt = cur[j - 1] + indel
                if alt < best:
                    best = alt
                alt = prev[j - 1] + sub[qi, records[r, j - 1]]
                if alt < best:
                    best = alt
                cur[j] = best
            for j in range(width + 1):
                prev[j] = cur[j]
        out[r] = prev[width]
    return out


try:
    import numba

    _dp_rows_jit = numba.njit(cache=True, nogil=True)(_dp_rows)
except ImportError:  # pragma: no cover
    _dp_rows_jit = None


def batch_distance_units(query: np.ndarray, records: np.ndarray, indel: float) -> np.ndarray:
    """Distances from ``query`` to every row of ``records``, in feature units."""
    if _dp_rows_jit is None:
        return batch_distance_units_numpy(query, records, indel)
    sub = feature_table().diff_units
    return _dp_rows_jit(
        np.ascontiguousarray(query, dtype=np.uint8),
        np.ascontiguousarray(records, dtype=np.uint8),
        float(indel),
        sub,
    )


def feature_edit_distance(a: IpaString, b: IpaString, costs: EditCosts = DEFAULT_COSTS) -> float:
    units = distance_units(a.codes(), b.codes(), costs.indel_units)
    return units / feature_table().n_features


def similarity_from_units(units, len_a, len_b, costs: EditCosts = DEFAULT_COSTS):
    """Map distance units to PS in [0, 1]; works on scalars and arrays."""
    norm = np.maximum(len_a, len_b) * costs.normalizer_units
    return np.clip(1.0 - units / norm, 0.0, 1.0)


def phonetic_similarity(a: IpaString, b: IpaString, costs: EditCosts = DEFAULT_COSTS) -> float:
    if not len(a) and not len(b):
        raise ValueError("undefined similarity: both IPA strings are empty")
    units = distance_units(a.codes(), b.codes(), costs.indel_units)
    return float(similarity_from_units(units, len(a), len(b), costs))
