"""The 30x12 normalized sequence matrix fed to the time-series branch."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, FeatureError, ValidationError

COLUMNS = (
    "close", "open", "high", "low", "ma5", "turnover_rate",
    "month", "week",
    "close_ratio", "open_ratio", "high_ratio", "low_ratio",
)
ROWS = 30


@dataclass(frozen=True)
class SequenceMatrix:
    values: np.ndarray  # (30, 12) float64
    anchor_close: float


def compute_ratios(prev_close: float, open: float, high: float, low: float, close: float) -> tuple[float, float, float, float]:
    """Returns (close_ratio, open_ratio, high_ratio, low_ratio) relative to prev_close."""
    if not prev_close > 0:
        raise DomainError(f"prev_close must be positive, got {prev_close}")
    return tuple((v - prev_close) / prev_close for v in (close, open, high, low))


def build_matrix(bars: Sequence) -> SequenceMatrix:
    """Build from 31 consecutive bars: bars[0] only supplies the first previous close."""
    if len(bars) != ROWS + 1:
        raise ValidationError(f"need {ROWS + 1} bars (one prior bar + {ROWS}), got {len(bars)}")
    anchor = bars[-1].close
    out = np.empty((ROWS, len(COLUMNS)))
    for k in range(1, ROWS + 1):
        b, prev = bars[k], bars[k - 1]
        if b.ma5 is None:
            raise FeatureError(f"{b.date}: ma5 missing")
        wd = b.date.isoweekday()
        if wd > 5:
            raise ValidationError(f"{b.date}: not a trading weekday")
        out[k - 1] = (
            b.close / anchor, b.open / anchor, b.high / anchor, b.low / anchor, b.ma5 / anchor,
            b.turnover_rate,
            b.date.month / 12, wd / 5,
            *compute_ratios(prev.close, b.open, b.high, b.low, b.close),
        )
    if not np.all(np.isfinite(out)):
        raise FeatureError("non-finite value in sequence matrix")
    return SequenceMatrix(out, anchor)


def sample_matrix(sample) -> SequenceMatrix:
    return build_matrix((sample.seq_prev, *sample.seq_window))
