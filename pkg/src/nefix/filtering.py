"""Static candidate-set reduction and candidate recall/precision."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .index import Candidate

METHODS = ("topk", "threshold", "std")


@dataclass(frozen=True)
class FilterSpec:
    method: str
    k: int | None = None
    theta: float | None = None
    sigma: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown filter method {self.method!r}; expected one of {METHODS}")
        needed = {"topk": "k", "threshold": "theta", "std": "sigma"}[self.method]
        given = {name for name in ("k", "theta", "sigma") if getattr(self, name) is not None}
        if given != {needed}:
            raise ValueError(f"filter method {self.method!r} takes exactly the {needed!r} parameter")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be positive")
        if self.theta is not None and self.theta < 0:
            raise ValueError("theta must be nonnegative")
        if self.sigma is not None and self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    def apply(self, cands: Sequence[Candidate]) -> list[Candidate]:
        if self.method == "topk":
            return filter_topk(cands, self.k)
        if self.method == "threshold":
            return filter_threshold(cands, self.theta)
        return filter_std(cands, self.sigma)


def filter_topk(cands: Sequence[Candidate], k: int) -> list[Candidate]:
    return list(cands[:k])


def filter_threshold(cands: Sequence[Candidate], theta: float) -> list[Candidate]:
    return [c for c in cands if c.ps >= theta]


def _argmax(cands: Sequence[Candidate]) -> Candidate:
    return min(cands, key=lambda c: (-c.ps, c.surface))


def filter_std(cands: Sequence[Candidate], sigma: float) -> list[Candidate]:
    """Keep the upper tail ``ps >= mean + sigma * std`` (population std).

    Equal scores keep everything; an empty tail keeps the single best.
    """
    if not cands:
        return []
    ps = np.array([c.ps for c in cands])
    if ps.max() == ps.min():
        return list(cands)
    cut = ps.mean() + sigma * ps.std()
    kept = [c for c, p in zip(cands, ps) if p >= cut - 1e-12]
    return kept or [_argmax(cands)]


def _surface(item) -> str:
    return (item.surface if isinstance(item, Candidate) else str(item)).strip().casefold()


def candidate_recall_precision(
    surviving: Sequence[Iterable[Candidate | str]],
    gold: Sequence[str | Iterable[str]],
) -> tuple[float, float]:
    """Micro-averaged gold containment rate and gold share of survivors.

    ``gold`` holds one entity (or a collection of acceptable surfaces) per
    sample.  Duplicates of the gold entity among survivors count per
    occurrence.
    """
    if len(surviving) != len(gold):
        raise ValueError("surviving sets and gold entities differ in length")
    if not surviving:
        return 0.0, 0.0
    contained = hits = total = 0
    for cands, g in zip(surviving, gold):
        golds = {_surface(g)} if isinstance(g, str) else {_surface(x) for x in g}
        names = [_surface(c) for c in cands]
        n_hit = sum(name in golds for name in names)
        contained += n_hit > 0
        hits += n_hit
        total += len(names)
    return contained / len(surviving), (hits / total if total else 0.0)
