"""Classification / drawdown metrics and a deterministic slot-based portfolio
simulation driven by per-day up-probabilities."""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainError, ParseError

logger = logging.getLogger(__name__)

SIGNAL_COLUMNS = ("date", "symbol", "p_up")


# --- metrics --------------------------------------------------------------

@dataclass(frozen=True)
class ClassMetrics:
    ppv: float | None
    npv: float | None
    tp: int
    fp: int
    tn: int
    fn: int


def ppv_npv(predictions, labels) -> ClassMetrics:
    """Precision of up-calls and of down-calls; None where nothing was called."""
    p = np.asarray(predictions).astype(int).ravel()
    y = np.asarray(labels).astype(int).ravel()
    if p.shape != y.shape:
        raise DomainError(f"length mismatch: {p.size} predictions vs {y.size} labels")
    if p.size == 0:
        raise DomainError("ppv_npv needs at least one prediction")
    tp = int(np.sum((p == 1) & (y == 1)))
    fp = int(np.sum((p == 1) & (y == 0)))
    tn = int(np.sum((p == 0) & (y == 0)))
    fn = int(np.sum((p == 0) & (y == 1)))
    return ClassMetrics(
        tp / (tp + fp) if tp + fp else None,
        tn / (tn + fn) if tn + fn else None,
        tp, fp, tn, fn,
    )


def max_drawdown(equity: Sequence[float]) -> float:
    values = np.asarray(equity, dtype=float)
    if values.size == 0:
        raise DomainError("max_drawdown needs a non-empty series")
    if np.any(values <= 0):
        raise DomainError("equity values must be positive")
    peak = np.maximum.accumulate(values)
    return float(np.max((peak - values) / peak))


def index_metrics(closes: Sequence[float]) -> tuple[float, float]:
    """(total change, max drawdown) of an index close series."""
    mdd = max_drawdown(closes)
    return (closes[-1] - closes[0]) / closes[0], mdd


# --- signals --------------------------------------------------------------

@dataclass(frozen=True)
class Signal:
    date: dt.date
    symbol: str
    p_up: float
    r_hat: float | None = None


def parse_signals(text: str) -> list[Signal]:
    reader = csv.reader(io.StringIO(text))
    header = [h.strip() for h in next(reader, [])]
    if tuple(header[:3]) != SIGNAL_COLUMNS or header[3:] not in ([], ["r_hat"]):
        raise ParseError(1, f"signal header must be date,symbol,p_up[,r_hat], got {header!r}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(lineno, f"expected {len(header)} fields, got {len(row)}")
        try:
            r_hat = float(row[3]) if len(row) > 3 and row[3] != "" else None
            out.append(Signal(dt.date.fromisoformat(row[0].strip()), row[1].strip(), float(row[2]), r_hat))
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
    return out


def format_signals(signals: Iterable[Signal]) -> str:
    signals = list(signals)
    with_r = any(s.r_hat is not None for s in signals)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SIGNAL_COLUMNS + (("r_hat",) if with_r else ()))
    for s in sorted(signals, key=lambda s: (s.date, s.symbol)):
        row = [s.date.isoformat(), s.symbol, repr(s.p_up)]
        if with_r:
            row.append("" if s.r_hat is None else repr(s.r_hat))
        w.writerow(row)
    return buf.getvalue()


# --- simulation -----------------------------------------------------------

@dataclass(frozen=True)
class BacktestConfig:
    max_positions: int = 5
    entry_threshold: float = 0.80
    hold_days: int = 5
    cost: float = 0.003
    initial_capital: float = 1_000_000.0

    def __post_init__(self):
        if not 0 < self.entry_threshold < 1:
            raise DomainError(f"entry_threshold must be in (0, 1), got {self.entry_threshold}")
        if not 0 <= self.cost < 0.1:
            raise DomainError(f"cost must be in [0, 0.1), got {self.cost}")
        if self.max_positions < 1:
            raise DomainError(f"max_positions must be >= 1, got {self.max_positions}")
        if self.hold_days < 1:
            raise DomainError(f"hold_days must be >= 1, got {self.hold_days}")
        if not self.initial_capital > 0:
            raise DomainError(f"initial_capital must be positive, got {self.initial_capital}")


@dataclass
class Trade:
    symbol: str
    slot: int
    signal_date: dt.date
    entry_date: dt.date
    entry_price: float
    shares: float
    exit_date: dt.date | None = None
    exit_price: float | None = None
    net_return: float | None = None
    pnl: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("signal_date", "entry_date", "exit_date"):
            d[k] = d[k].isoformat() if d[k] else None
        return d


@dataclass
class BacktestReport:
    dates: list[dt.date]
    equity: list[float]
    trades: list[Trade]
    open_positions: list[Trade]
    config: BacktestConfig
    skipped: list[str] = field(default_factory=list)

    @property
    def pf(self) -> float:
        return self.equity[-1] / self.equity[0] - 1 if self.equity else 0.0

    @property
    def mdd(self) -> float:
        return max_drawdown(self.equity) if self.equity else 0.0

    def summary(self) -> dict:
        return {
            "pf": self.pf,
            "mdd": self.mdd,
            "initial_capital": self.config.initial_capital,
            "final_equity": self.equity[-1] if self.equity else self.config.initial_capital,
            "n_trades": len(self.trades),
            "n_open": len(self.open_positions),
            "start": self.dates[0].isoformat() if self.dates else None,
            "end": self.dates[-1].isoformat() if self.dates else None,
        }

    def to_json(self) -> str:
        payload = {
            "summary": self.summary(),
            "config": asdict(self.config),
            "trades": [t.to_dict() for t in self.trades],
            "open_positions": [t.to_dict() for t in self.open_positions],
            "skipped": self.skipped,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def equity_csv(self) -> str:
        lines = ["date,equity"] + [f"{d.isoformat()},{e!r}" for d, e in zip(self.dates, self.equity)]
        return "\n".join(lines) + "\n"


def run_backtest(
    signals: Iterable[Signal],
    prices: Mapping[str, Sequence],
    config: BacktestConfig | None = None,
) -> BacktestReport:
    """Simulate the trading rules over the union calendar of `prices`.

    A day-t signal above the threshold buys at the t+1 open and sells at the
    open `hold_days` trading days after entry; each of the `max_positions`
    slots trades its own compounding capital. The round-trip cost is charged
    once, at exit. Equity is marked to market at each close.
    """
    cfg = config or BacktestConfig()
    bars = {sym: {b.date: b for b in seq} for sym, seq in prices.items()}
    calendar = sorted({d for by_date in bars.values() for d in by_date})
    day_index = {d: k for k, d in enumerate(calendar)}

    by_day: dict[dt.date, list[Signal]] = {}
    for s in signals:
        if s.date not in day_index:
            raise DomainError(f"signal date {s.date} ({s.symbol}) is not in the price calendar")
        by_day.setdefault(s.date, []).append(s)

    slot_cash = [cfg.initial_capital / cfg.max_positions] * cfg.max_positions
    holding: list[Trade | None] = [None] * cfg.max_positions
    exit_due: list[int] = [0] * cfg.max_positions
    pending: list[Signal | None] = [None] * cfg.max_positions
    last_close: dict[str, float] = {}
    trades: list[Trade] = []
    skipped: list[str] = []
    equity: list[float] = []

    for k, day in enumerate(calendar):
        # exits at the open
        for i, pos in enumerate(holding):
            if pos is None or exit_due[i] > k:
                continue
            bar = bars[pos.symbol].get(day)
            if bar is None:
                logger.warning("%s: no %s bar for exit, deferring", day, pos.symbol)
                continue
            proceeds = pos.shares * bar.open * (1 - cfg.cost)
            pos.exit_date, pos.exit_price = day, bar.open
            pos.net_return = bar.open / pos.entry_price * (1 - cfg.cost) - 1
            pos.pnl = proceeds - slot_cash[i]
            slot_cash[i] = proceeds
            trades.append(pos)
            holding[i] = None
        # entries reserved at the previous close
        for i, sig in enumerate(pending):
            if sig is None:
                continue
            pending[i] = None
            bar = bars[sig.symbol].get(day)
            if bar is None:
                msg = f"{day}: no {sig.symbol} bar for entry, trade skipped"
                logger.warning(msg)
                skipped.append(msg)
                continue
            holding[i] = Trade(sig.symbol, i, sig.date, day, bar.open, slot_cash[i] / bar.open)
            exit_due[i] = k + cfg.hold_days
        # mark to market
        for sym, by_date in bars.items():
            if day in by_date:
                last_close[sym] = by_date[day].close
        value = 0.0
        for i in range(cfg.max_positions):
            pos = holding[i]
            value += slot_cash[i] if pos is None else pos.shares * last_close[pos.symbol]
        equity.append(value)
        # decisions at the close, executed next open
        if k + 1 >= len(calendar):
            continue
        free = [i for i in range(cfg.max_positions) if holding[i] is None and pending[i] is None]
        if not free:
            continue
        busy = {p.symbol for p in holding if p} | {s.symbol for s in pending if s}
        candidates = sorted(
            (s for s in by_day.get(day, ()) if s.p_up > cfg.entry_threshold and s.symbol not in busy),
            key=lambda s: (-s.p_up, s.symbol),
        )
        seen = set()
        for s in candidates:
            if not free:
                break
            if s.symbol in seen:
                continue
            seen.add(s.symbol)
            pending[free.pop(0)] = s

    open_positions = [p for p in holding if p is not None]
    return BacktestReport(calendar, equity, trades, open_positions, cfg, skipped)
