"""Independent reference implementations used by the tests."""

from __future__ import annotations

import itertools

import numpy as np

from nefix.index import Candidate, PhoneticIndex
from nefix.phonetics import IpaString, batch_distance_units_numpy, distance_units, similarity_from_units


def linear_scan(index: PhoneticIndex, query: IpaString, k: int, vectorized: bool = False) -> list[tuple[str, float]]:
    """Score every record, sort by (-ps, surface), keep k."""
    q = query.codes()
    costs = index.costs
    scored = []
    if vectorized:
        by_len: dict[int, list[int]] = {}
        for i, r in enumerate(index.records):
            by_len.setdefault(len(r.ipa), []).append(i)
        for length, ids in by_len.items():
            codes = np.stack([index.records[i].ipa.codes() for i in ids]) if length else np.zeros((len(ids), 0), np.uint8)
            units = batch_distance_units_numpy(q, codes, costs.indel_units)
            ps = similarity_from_units(units, length, len(q), costs)
            scored += [(index.records[i].surface, float(p)) for i, p in zip(ids, ps)]
    else:
        for r in index.records:
            units = distance_units(q, r.ipa.codes(), costs.indel_units)
            scored.append((r.surface, float(similarity_from_units(units, len(r.ipa), len(q), costs))))
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored[:k]


def as_pairs(cands: list[Candidate]) -> list[tuple[str, float]]:
    return [(c.surface, c.ps) for c in cands]


def word_alignment_distance(a: list[str], b: list[str]) -> int:
    """Minimum edits over every monotone alignment, enumerated explicitly.

    An alignment is chosen by which reference positions are matched (or
    substituted) against which hypothesis positions: pick equally many
    positions from each side in order; the rest are deletions/insertions.
    """
    best = len(a) + len(b)
    for n in range(min(len(a), len(b)) + 1):
        for ia in itertools.combinations(range(len(a)), n):
            for ib in itertools.combinations(range(len(b)), n):
                subs = sum(a[i] != b[j] for i, j in zip(ia, ib))
                best = min(best, subs + (len(a) - n) + (len(b) - n))
    return best
