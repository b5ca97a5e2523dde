"""TS-OHLCT chart rendering: binary pixel matrices with weekend/holiday
separators, a moving-average trace and a turnover bar region."""

from __future__ import annotations

import datetime as dt
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CapacityError, EncodingError, ImageFormatError

IMAGE_FORMATS = ("pgm", "raw")


@dataclass(frozen=True)
class OHLCTUnit:
    """One chart unit: a trading day, or a merged block of days (date is None)."""

    open: float
    high: float
    low: float
    close: float
    turnover: float
    ma5: float | None
    date: dt.date | None = None

    @classmethod
    def from_bar(cls, bar) -> "OHLCTUnit":
        return cls(bar.open, bar.high, bar.low, bar.close, bar.turnover_rate, bar.ma5, bar.date)


@dataclass(frozen=True)
class ChartGeometry:
    price_rows: int = 48
    divider_rows: int = 1
    turnover_rows: int = 15
    unit_cols: int = 3
    separator_cols: int = 3

    def __post_init__(self):
        if self.unit_cols != 3 or self.separator_cols != 3:
            raise ValueError("unit_cols and separator_cols are fixed at 3")
        if self.price_rows < 1 or self.turnover_rows < 1 or self.divider_rows < 0:
            raise ValueError(f"invalid geometry {self}")

    @property
    def height(self) -> int:
        return self.price_rows + self.divider_rows + self.turnover_rows

    def fixed_width(self, units: int, resolution: int = 1) -> int:
        """Static image width for `units` chart units at the given resolution.

        Daily maps reserve room for one separator per started week plus two
        holiday separators; merged maps have no separators.
        """
        if resolution == 1:
            return self.unit_cols * (units + math.ceil(units / 5) + 2)
        return self.unit_cols * units


@dataclass(frozen=True)
class ColumnPlan:
    width: int
    unit_starts: tuple[int, ...]
    separator_starts: tuple[int, ...]

    @property
    def padding(self) -> int:
        return self.unit_starts[0] if self.unit_starts else self.width


def layout_columns(dates: Sequence[dt.date | None], geometry: ChartGeometry, width: int | None = None) -> ColumnPlan:
    """Right-aligned column plan: one unit per date, a separator wherever two
    consecutive dates are more than one calendar day apart."""
    if width is None:
        width = geometry.fixed_width(len(dates), 1)
    has_dates = all(d is not None for d in dates)
    slots: list[str] = []
    for k, d in enumerate(dates):
        if k and has_dates:
            if d <= dates[k - 1]:
                raise ValueError(f"dates must be strictly ascending, got {dates[k - 1]} then {d}")
            if (d - dates[k - 1]).days > 1:
                slots.append("sep")
        slots.append("unit")
    used = geometry.unit_cols * slots.count("unit") + geometry.separator_cols * slots.count("sep")
    if used > width:
        raise CapacityError(f"column plan needs {used} columns but fixed width is {width}")
    col = width - used
    units, seps = [], []
    for kind in slots:
        if kind == "unit":
            units.append(col)
            col += geometry.unit_cols
        else:
            seps.append(col)
            col += geometry.separator_cols
    return ColumnPlan(width, tuple(units), tuple(seps))


@dataclass
class ChartImage:
    pixels: np.ndarray  # uint8 in {0, 1}, shape (height, width)
    meta: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, ChartImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels) and self.meta == other.meta


def _price_row(v: float, vmax: float, vmin: float, rows: int) -> int:
    if vmax == vmin:
        return (rows - 1) // 2
    return int(math.floor((rows - 1) * (vmax - v) / (vmax - vmin) + 0.5))


def render_ohlct(
    units: Sequence[OHLCTUnit],
    geometry: ChartGeometry | None = None,
    *,
    resolution: int = 1,
    symbol: str = "",
    width: int | None = None,
) -> ChartImage:
    """Render units (oldest first) into a TS-OHLCT image.

    Daily maps (resolution 1) need dates and get separators; merged maps are
    drawn contiguously. Foreground is 1, background 0.
    """
    geo = geometry or ChartGeometry()
    if not units:
        raise EncodingError("cannot render an empty window")
    for k, u in enumerate(units):
        for name in ("open", "high", "low", "close", "turnover", "ma5"):
            v = getattr(u, name)
            if v is None:
                raise EncodingError(f"unit {k}: {name} is missing")
            if not math.isfinite(v):
                raise EncodingError(f"unit {k}: {name} is not finite ({v})")

    if resolution == 1:
        if any(u.date is None for u in units):
            raise EncodingError("daily maps need a date on every unit")
        plan = layout_columns([u.date for u in units], geo, width or geo.fixed_width(len(units), 1))
    else:
        plan = layout_columns([None] * len(units), geo, width or geo.fixed_width(len(units), resolution))

    vmax = max(max(u.high for u in units), max(u.ma5 for u in units))
    vmin = min(min(u.low for u in units), min(u.ma5 for u in units))
    tmax = max(u.turnover for u in units)

    img = np.zeros((geo.height, plan.width), dtype=np.uint8)
    P, T = geo.price_rows, geo.turnover_rows
    for u, c0 in zip(units, plan.unit_starts):
        left, mid, right = c0, c0 + 1, c0 + 2
        row = lambda v: _price_row(v, vmax, vmin, P)
        img[row(u.open), left] = 1
        img[row(u.close), right] = 1
        img[row(u.high) : row(u.low) + 1, mid] = 1
        img[row(u.ma5), mid] = 1
        bar = 1 if tmax == 0 else int(math.floor((T - 1) * u.turnover / tmax + 0.5)) + 1
        img[geo.height - bar :, mid] = 1

    end = units[-1].date
    meta = {
        "n": len(units) * resolution,
        "resolution": resolution,
        "symbol": symbol,
        "end_date": end.isoformat() if end else None,
    }
    return ChartImage(img, meta)


# --- file formats ---------------------------------------------------------

def _manifest_path(path: Path) -> Path:
    return path.with_suffix(".json")


def write_image(image: ChartImage, path: str | os.PathLike, format: str = "pgm") -> None:
    """Write a binary image losslessly as P5 graymap or raw bytes + JSON manifest."""
    if format not in IMAGE_FORMATS:
        raise ValueError(f"format must be one of {IMAGE_FORMATS}, got {format!r}")
    path = Path(path)
    h, w = image.pixels.shape
    data = (image.pixels.astype(np.uint8) * 255).tobytes()
    try:
        if format == "pgm":
            with open(path, "wb") as f:
                meta = json.dumps(image.meta, sort_keys=True, separators=(",", ":"))
                f.write(f"P5\n# meta {meta}\n{w} {h}\n255\n".encode("ascii"))
                f.write(data)
        else:
            path.write_bytes(data)
            manifest = {"height": h, "width": w, **{k: image.meta.get(k) for k in ("n", "resolution", "symbol", "end_date")}}
            _manifest_path(path).write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    except OSError as exc:
        raise OSError(f"failed to write image {path}: {exc}") from exc


def _to_binary(raw: bytes, h: int, w: int, path: Path) -> np.ndarray:
    if len(raw) != h * w:
        raise ImageFormatError(f"{path}: expected {h * w} pixel bytes, found {len(raw)}")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(h, w)
    if not np.all((arr == 0) | (arr == 255)):
        raise ImageFormatError(f"{path}: pixel values other than 0/255")
    return (arr // 255).astype(np.uint8)


def _read_pgm(path: Path) -> ChartImage:
    blob = path.read_bytes()
    tokens: list[bytes] = []
    meta: dict = {}
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            start = pos
            while pos < len(blob) and blob[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            comment = blob[start + 1 : pos].strip()
            if comment.startswith(b"meta "):
                try:
                    meta = json.loads(comment[5:])
                except ValueError:
                    raise ImageFormatError(f"{path}: corrupt metadata comment") from None
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated header")
        tokens.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise ImageFormatError(f"{path}: not a binary graymap (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageFormatError(f"{path}: malformed header") from None
    if maxval != 255:
        raise ImageFormatError(f"{path}: maxval {maxval}, expected 255")
    return ChartImage(_to_binary(blob[pos:], h, w, path), meta)


def _read_raw(path: Path) -> ChartImage:
    try:
        manifest = json.loads(_manifest_path(path).read_text())
        h, w = int(manifest["height"]), int(manifest["width"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ImageFormatError(f"{path}: unreadable manifest ({exc})") from None
    meta = {k: manifest.get(k) for k in ("n", "resolution", "symbol", "end_date")}
    return ChartImage(_to_binary(path.read_bytes(), h, w, path), meta)


def read_image(path: str | os.PathLike, format: str | None = None) -> ChartImage:
    """Inverse of write_image. Format defaults from the suffix (.pgm, else raw)."""
    path = Path(path)
    fmt = format or ("pgm" if path.suffix.lower() == ".pgm" else "raw")
    if fmt not in IMAGE_FORMATS:
        raise ValueError(f"format must be one of {IMAGE_FORMATS}, got {fmt!r}")
    return _read_pgm(path) if fmt == "pgm" else _read_raw(path)
