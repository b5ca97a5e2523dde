"""Cascading multi-scale decomposition of an n-day OHLCT window into C
five-unit sub-maps at geometrically coarser time resolutions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .chart import OHLCTUnit
from .errors import DomainError

BASE = 5


def _check_n(n: int) -> None:
    if not isinstance(n, int) or n <= 0 or n % BASE:
        raise DomainError(f"n must be a positive multiple of {BASE}, got {n!r}")


def num_submaps(n: int) -> int:
    """ceil(log5(n)), computed in integers."""
    _check_n(n)
    c, span = 0, 1
    while span < n:
        span *= BASE
        c += 1
    return max(c, 1)


def resolution(i: int, n: int) -> int:
    """Days per unit of sub-map i (1-based)."""
    c = num_submaps(n)
    if not 1 <= i <= c:
        raise DomainError(f"sub-map index {i} out of range 1..{c}")
    return min(BASE ** (i - 1), n // BASE)


def feature_weights(c: int) -> list[float]:
    if c < 1:
        raise DomainError(f"C must be >= 1, got {c}")
    if c == 1:
        return [1.0]
    # halve down the cascade; the coarsest map repeats its neighbour so the sum is 1
    w = [0.5 / 2 ** (i - 1) for i in range(1, c)]
    w.append(0.5 / 2 ** (c - 2))
    return w


def split_dims(weights: Sequence[float], total: int) -> list[int]:
    """Largest-remainder apportionment of `total` feature dims by weight;
    ties go to the lower index."""
    raw = [w * total for w in weights]
    dims = [int(x) for x in raw]
    short = total - sum(dims)
    order = sorted(range(len(raw)), key=lambda k: (-(raw[k] - dims[k]), k))
    for k in order[:short]:
        dims[k] += 1
    return dims


@dataclass(frozen=True)
class SubMapSet:
    n: int
    C: int
    maps: tuple[tuple[OHLCTUnit, ...], ...]
    resolutions: tuple[int, ...]
    weights: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "C": self.C,
            "resolutions": list(self.resolutions),
            "weights": list(self.weights),
            "maps": [
                [
                    {
                        "date": u.date.isoformat() if u.date else None,
                        "open": u.open,
                        "high": u.high,
                        "low": u.low,
                        "close": u.close,
                        "turnover": u.turnover,
                        "ma5": u.ma5,
                    }
                    for u in m
                ]
                for m in self.maps
            ],
        }


def _merge(days: Sequence[OHLCTUnit]) -> OHLCTUnit:
    return OHLCTUnit(
        open=days[0].open,
        high=max(d.high for d in days),
        low=min(d.low for d in days),
        close=days[-1].close,
        turnover=math.fsum(d.turnover for d in days),  # correctly rounded, order-free
        ma5=days[-1].ma5,
        date=None,
    )


def decompose(window: Sequence, n: int) -> SubMapSet:
    """Split the most recent 5*M_i days into 5 blocks of M_i days for each sub-map.

    `window` holds DailyBar or OHLCTUnit items, oldest first. Sub-map 1 keeps
    the raw daily units (with dates); coarser maps merge blocks and drop dates.
    """
    _check_n(n)
    if len(window) < n:
        raise DomainError(f"window has {len(window)} days, need {n}")
    units = [u if isinstance(u, OHLCTUnit) else OHLCTUnit.from_bar(u) for u in window[-n:]]
    c = num_submaps(n)
    res = tuple(resolution(i, n) for i in range(1, c + 1))
    maps = []
    for m in res:
        span = units[n - BASE * m :]
        if m == 1:
            maps.append(tuple(span))
        else:
            maps.append(tuple(_merge(span[j * m : (j + 1) * m]) for j in range(BASE)))
    return SubMapSet(n, c, tuple(maps), res, tuple(feature_weights(c)))
