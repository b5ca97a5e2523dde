"""Daily bar ingestion, labeled sample construction, chronological splits and
a seeded synthetic market generator."""

from __future__ import annotations

import csv
import datetime as dt
import io
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from statistics import NormalDist
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, DuplicateDateError, ParseError, ValidationError

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("symbol", "date", "open", "high", "low", "close", "volume", "turnover_rate")
SEQ_LEN = 30
DEFAULT_LIMIT = 0.10


@dataclass(frozen=True)
class DailyBar:
    date: dt.date
    open: float
    high: float
    low: float
    close: float
    volume: float
    turnover_rate: float
    ma5: float | None = None
    symbol: str = ""

    def check(self) -> None:
        """Raise ValidationError if the OHLC / turnover invariants do not hold."""
        for name in ("open", "high", "low", "close"):
            v = getattr(self, name)
            if not math.isfinite(v) or v <= 0:
                raise ValidationError(f"{self.date}: {name} must be a positive finite price, got {v}")
        if self.low > min(self.open, self.close) or self.high < max(self.open, self.close):
            raise ValidationError(
                f"{self.date}: OHLC invariant violated "
                f"(o={self.open}, h={self.high}, l={self.low}, c={self.close})"
            )
        if not self.turnover_rate >= 0:
            raise ValidationError(f"{self.date}: turnover_rate must be >= 0, got {self.turnover_rate}")
        if not self.volume >= 0:
            raise ValidationError(f"{self.date}: volume must be >= 0, got {self.volume}")


@dataclass(frozen=True)
class Sample:
    symbol: str
    window: tuple[DailyBar, ...]
    seq_window: tuple[DailyBar, ...]
    seq_prev: DailyBar  # bar before seq_window[0]; supplies prev close for the ratio features
    y: int
    r: float
    label_date: dt.date

    @property
    def end_date(self) -> dt.date:
        return self.window[-1].date

    @property
    def n(self) -> int:
        return len(self.window)


@dataclass
class DatasetSplit:
    train: list[Sample]
    validation: list[Sample]
    test: list[Sample]
    train_end: dt.date
    val_end: dt.date
    dropped: int = 0


def mean5(closes: Sequence[float]) -> float:
    """Correctly rounded arithmetic mean (exact rational sum, one rounding)."""
    return float(sum((Fraction(c) for c in closes), Fraction(0)) / len(closes))


def with_ma5(bars: Sequence[DailyBar]) -> list[DailyBar]:
    """Return copies of one symbol's ascending bars with ma5 filled where 5 closes exist."""
    out = []
    for i, bar in enumerate(bars):
        ma5 = mean5([b.close for b in bars[i - 4 : i + 1]]) if i >= 4 else None
        out.append(replace(bar, ma5=ma5))
    return out


def parse_bars(text: str) -> list[DailyBar]:
    """Parse CSV text into bars sorted by (symbol, date), with ma5 computed per symbol."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(1, "empty input, expected header") from None
    header = [h.strip() for h in header]
    if tuple(header) != CSV_COLUMNS:
        raise ParseError(1, f"header {header!r} does not match {','.join(CSV_COLUMNS)}")

    by_symbol: dict[str, dict[dt.date, DailyBar]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(CSV_COLUMNS):
            raise ParseError(lineno, f"expected {len(CSV_COLUMNS)} fields, got {len(row)}")
        symbol = row[0].strip()
        try:
            date = dt.date.fromisoformat(row[1].strip())
            o, h, l, c, vol, tr = (float(x) for x in row[2:])
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
        bar = DailyBar(date, o, h, l, c, vol, tr, symbol=symbol)
        bar.check()
        dates = by_symbol.setdefault(symbol, {})
        if date in dates:
            raise DuplicateDateError(f"line {lineno}: duplicate date {date} for symbol {symbol!r}")
        dates[date] = bar

    out: list[DailyBar] = []
    for symbol in sorted(by_symbol):
        bars = [by_symbol[symbol][d] for d in sorted(by_symbol[symbol])]
        out.extend(with_ma5(bars))
    return out


def group_by_symbol(bars: Iterable[DailyBar]) -> dict[str, list[DailyBar]]:
    groups: dict[str, list[DailyBar]] = {}
    for bar in bars:
        groups.setdefault(bar.symbol, []).append(bar)
    return groups


def format_bars(bars: Iterable[DailyBar]) -> str:
    """Serialize bars to the CSV input schema (inverse of parse_bars, ma5 dropped)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for b in bars:
        w.writerow([b.symbol, b.date.isoformat(), repr(b.open), repr(b.high), repr(b.low),
                    repr(b.close), repr(b.volume), repr(b.turnover_rate)])
    return buf.getvalue()


def _dec(x: float) -> Decimal:
    return Decimal(repr(float(x)))


def round_to_cent(x: Decimal) -> Decimal:
    return x.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)


def is_limit_up(prev_close: float, close: float, limit: float = DEFAULT_LIMIT) -> bool:
    if not prev_close > 0 or not close > 0:
        raise DomainError(f"prices must be positive, got prev_close={prev_close}, close={close}")
    if not 0 < limit < 1:
        raise DomainError(f"limit must be in (0, 1), got {limit}")
    cap = round_to_cent(_dec(prev_close) * (1 + _dec(limit)))
    return _dec(close) >= cap


def make_samples(
    bars: Sequence[DailyBar],
    n: int,
    horizon: int = 5,
    limit: float = DEFAULT_LIMIT,
    seq_len: int = SEQ_LEN,
) -> list[Sample]:
    """Build labeled samples for one symbol's ascending bars.

    A sample ending at index t uses bars[t-n+1..t] as image window and
    bars[t-seq_len+1..t] as sequence window; bars[t-seq_len] provides the
    previous close for the first ratio row. The label is the close-to-close
    return to t+horizon. Samples whose final bar is limit-up, or with ma5
    missing anywhere in either window, are skipped.
    """
    if n <= 0 or n % 5:
        raise DomainError(f"n must be a positive multiple of 5, got {n}")
    if horizon < 1:
        raise DomainError(f"horizon must be >= 1, got {horizon}")
    out: list[Sample] = []
    first = max(n - 1, seq_len)
    for t in range(first, len(bars) - horizon):
        end = bars[t]
        if is_limit_up(bars[t - 1].close, end.close, limit):
            continue
        window = tuple(bars[t - n + 1 : t + 1])
        seq_window = tuple(bars[t - seq_len + 1 : t + 1])
        if any(b.ma5 is None for b in window) or any(b.ma5 is None for b in seq_window):
            continue
        fut = bars[t + horizon]
        r = (fut.close - end.close) / end.close
        out.append(Sample(end.symbol, window, seq_window, bars[t - seq_len], int(r > 0), r, fut.date))
    return out


def split_by_date(samples: Iterable[Sample], train_end: dt.date, val_end: dt.date) -> DatasetSplit:
    """Assign samples by final window date; drop samples whose label date leaks past
    their split's boundary."""
    if not train_end < val_end:
        raise DomainError(f"train_end {train_end} must precede val_end {val_end}")
    split = DatasetSplit([], [], [], train_end, val_end)
    for s in samples:
        if s.end_date <= train_end:
            bucket, bound = split.train, train_end
        elif s.end_date <= val_end:
            bucket, bound = split.validation, val_end
        else:
            bucket, bound = split.test, None
        if bound is not None and s.label_date > bound:
            split.dropped += 1
            continue
        bucket.append(s)
    for name in ("train", "validation", "test"):
        if not getattr(split, name):
            warnings.warn(f"{name} split is empty", stacklevel=2)
    return split


# --- synthetic data -------------------------------------------------------

PLANTED_RULES = ("momentum", "reversal")


@dataclass
class SynthConfig:
    """Generator settings.

    Closes scatter (``volatility * idio_ratio``) around a latent log-price
    random walk (``volatility`` per day, plus drift). With ``planted`` set, the
    close ``planted_horizon`` days after t is forced onto the side of close_t
    chosen by the rule: "momentum" means up iff close_t > ma5_t, "reversal"
    means up iff close_t < ma5_t. ``label_noise`` flips the rule per day.
    """

    start_price: float = 20.0
    volatility: float = 0.01
    idio_ratio: float = 1.0
    drift: float = 0.0
    # (length in days, daily log drift); cycled over the series, overriding `drift`
    regimes: list[tuple[int, float]] = field(default_factory=list)
    planted: str | None = None
    planted_horizon: int = 5
    planted_margin: float = 0.003
    label_noise: float = 0.0
    turnover_mean: float = 0.02
    turnover_sigma: float = 0.3
    float_shares: float = 1e8
    start_date: dt.date = dt.date(2020, 1, 6)


def trading_days(start: dt.date, count: int) -> list[dt.date]:
    """Weekday calendar of `count` days beginning at the first weekday >= start."""
    days = []
    d = start
    while len(days) < count:
        if d.weekday() < 5:
            days.append(d)
        d += dt.timedelta(days=1)
    return days


def _cents(x: float) -> float:
    return float(round_to_cent(Decimal(repr(x))))


_STD_NORMAL = NormalDist()


def _one_sided_normal(rng: np.random.Generator, mu: float, sd: float, side: float, bound: float) -> float:
    """Draw N(mu, sd) conditioned on side*(x - bound) >= 0."""
    if sd == 0:
        return bound if side * (mu - bound) < 0 else mu
    z0 = side * (bound - mu) / sd
    p = _STD_NORMAL.cdf(z0)
    if p > 1 - 1e-12:
        z = z0 + rng.exponential(1 / z0)
    else:
        z = _STD_NORMAL.inv_cdf(p + (1 - p) * rng.random())
    return mu + side * z * sd


def synth_series(seed: int, days: int, config: SynthConfig | None = None, symbol: str = "SYN") -> list[DailyBar]:
    if days < 80:
        raise DomainError(f"days must be >= 80, got {days}")
    cfg = config or SynthConfig()
    if cfg.planted not in (None, *PLANTED_RULES):
        raise DomainError(f"planted must be one of {PLANTED_RULES} or None, got {cfg.planted!r}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((days, 6))
    u = rng.random(days)
    dates = trading_days(cfg.start_date, days)

    drifts = np.full(days, cfg.drift)
    if cfg.regimes:
        i = 0
        while i < days:
            for length, mu in cfg.regimes:
                drifts[i : i + length] = mu
                i += length
                if i >= days:
                    break

    h = cfg.planted_horizon
    idio = cfg.volatility * cfg.idio_ratio
    level = math.log(cfg.start_price)
    closes: list[float] = []
    ma5: list[float | None] = []
    for s in range(days):
        level += drifts[s] + cfg.volatility * z[s, 0]
        if cfg.planted and s - h >= 4:
            anchor = closes[s - h]
            if cfg.planted == "momentum":
                up = anchor > ma5[s - h]
            else:
                up = anchor < ma5[s - h]
            if u[s] < cfg.label_noise:
                up = not up
            side = 1.0 if up else -1.0
            bound = math.log(anchor) + side * cfg.planted_margin
            c = _cents(math.exp(_one_sided_normal(rng, level, idio, side, bound)))
            # rounding may erase a tiny gap; push one cent past the anchor
            if up and c <= anchor:
                c = round(anchor + 0.01, 2)
            elif not up and c >= anchor:
                c = round(anchor - 0.01, 2)
        else:
            c = _cents(math.exp(level + idio * z[s, 1]))
        c = max(c, 0.01)
        closes.append(c)
        ma5.append(mean5(closes[-5:]) if s >= 4 else None)

    bars = []
    for s in range(days):
        c = closes[s]
        prev = closes[s - 1] if s else cfg.start_price
        o = max(_cents(prev * math.exp(0.3 * cfg.volatility * z[s, 2])), 0.01)
        hi = _cents(max(o, c) * math.exp(abs(0.5 * cfg.volatility * z[s, 3])))
        lo = max(_cents(min(o, c) * math.exp(-abs(0.5 * cfg.volatility * z[s, 4]))), 0.01)
        tr = round(cfg.turnover_mean * math.exp(cfg.turnover_sigma * z[s, 5]), 6)
        vol = float(round(tr * cfg.float_shares))
        bar = DailyBar(dates[s], o, hi, lo, c, vol, tr, ma5[s], symbol)
        bar.check()
        bars.append(bar)
    return bars


def synth_universe(seed: int, symbols: int, days: int, config: SynthConfig | None = None) -> dict[str, list[DailyBar]]:
    """Independent seeded series for `symbols` tickers named S000, S001, ..."""
    children = np.random.SeedSequence(seed).spawn(symbols)
    out = {}
    for k, child in enumerate(children):
        sym = f"S{k:03d}"
        out[sym] = synth_series(int(child.generate_state(1)[0]), days, config, symbol=sym)
    return out
