"""GEFCom2014-style hourly wind data: loading, validation, windows, scaling.

The on-disk format is a comma-separated file with a header row, hourly
timestamps formatted ``YYYY-MM-DD HH:MM``, one row per (zone, hour).
Power is a fraction of nominal capacity in [0, 1]; it may be empty for
forecast-horizon rows, in which case the record is flagged power-absent.
"""

from __future__ import annotations

import csv
import logging
from calendar import monthrange
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .errors import CoverageError, IntegrityError, ParseError, ValidationError

logger = logging.getLogger(__name__)

HOUR = timedelta(hours=1)
TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M"

# Power values may stray outside [0,1] by at most this much before the
# loader rejects them; smaller excursions are snapped to the boundary.
POWER_TOLERANCE = 1e-9


@dataclass(frozen=True)
class CsvSchema:
    """Column-name mapping; defaults match the GEFCom2014 wind-track release."""

    timestamp: str = "TIMESTAMP"
    zone: str = "ZONEID"
    power: str = "TARGETVAR"
    u10: str = "U10"
    v10: str = "V10"
    u100: str = "U100"
    v100: str = "V100"

    def columns(self) -> tuple[str, ...]:
        return (self.timestamp, self.zone, self.power,
                self.u10, self.v10, self.u100, self.v100)


@dataclass(frozen=True)
class TimeSeriesRecord:
    """One hourly observation; ``power`` is None when the target is absent."""

    timestamp: datetime
    zone: int
    power: float | None
    u10: float
    v10: float
    u100: float
    v100: float

    @property
    def has_power(self) -> bool:
        return self.power is not None


def _parse_power(text: str, line_no: int) -> float | None:
    if text.strip() == "":
        return None
    try:
        value = float(text)
    except ValueError as exc:
        raise ParseError(f"line {line_no}: bad power value {text!r}") from exc
    if value < -POWER_TOLERANCE or value > 1.0 + POWER_TOLERANCE:
        raise ValidationError(
            f"line {line_no}: power {value} outside [0,1] beyond tolerance {POWER_TOLERANCE}")
    return min(max(value, 0.0), 1.0)


def load_csv(path, schema: CsvSchema | None = None) -> list[TimeSeriesRecord]:
    """Load and validate hourly records, returned sorted by (zone, timestamp).

    Rows within one zone must appear in strictly increasing hourly order;
    duplicates, reversals, or gaps raise :class:`IntegrityError`. Rows with an
    empty power field are kept and flagged absent.
    """
    schema = schema or CsvSchema()
    per_zone: dict[int, list[TimeSeriesRecord]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [c for c in schema.columns() if c not in header]
        if missing:
            raise ParseError(f"{path}: header missing columns {missing}")
        idx = {c: header.index(c) for c in schema.columns()}

        for line_no, row in enumerate(reader, start=2):
            if not row or all(cell.strip() == "" for cell in row):
                continue
            if len(row) < len(header):
                raise ParseError(f"line {line_no}: expected {len(header)} fields, got {len(row)}")
            try:
                ts = datetime.strptime(row[idx[schema.timestamp]].strip(), TIMESTAMP_FORMAT)
                zone = int(row[idx[schema.zone]])
                u10 = float(row[idx[schema.u10]])
                v10 = float(row[idx[schema.v10]])
                u100 = float(row[idx[schema.u100]])
                v100 = float(row[idx[schema.v100]])
            except (ValueError, IndexError) as exc:
                raise ParseError(f"line {line_no}: {exc}") from exc
            power = _parse_power(row[idx[schema.power]], line_no)
            record = TimeSeriesRecord(ts, zone, power, u10, v10, u100, v100)

            series = per_zone.setdefault(zone, [])
            if series:
                step = record.timestamp - series[-1].timestamp
                if step <= timedelta(0):
                    raise IntegrityError(
                        f"line {line_no}: zone {zone} timestamp {record.timestamp} "
                        f"does not follow {series[-1].timestamp}")
                if step != HOUR:
                    raise IntegrityError(
                        f"line {line_no}: zone {zone} has a {step} gap before {record.timestamp}")
            series.append(record)

    records: list[TimeSeriesRecord] = []
    for zone in sorted(per_zone):
        records.extend(per_zone[zone])
    return records


def write_csv(records, path, schema: CsvSchema | None = None) -> None:
    """Write records in the canonical format; reloading reproduces them exactly."""
    schema = schema or CsvSchema()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(schema.columns())
        for r in records:
            power = "" if r.power is None else repr(float(r.power))
            writer.writerow([
                r.timestamp.strftime(TIMESTAMP_FORMAT), r.zone, power,
                repr(float(r.u10)), repr(float(r.v10)),
                repr(float(r.u100)), repr(float(r.v100)),
            ])


def parse_month(month) -> tuple[int, int]:
    """Accept ``"YYYY-MM"`` or a ``(year, month)`` pair."""
    if isinstance(month, str):
        parts = month.split("-")
        if len(parts) != 2:
            raise ValueError(f"month must look like 'YYYY-MM', got {month!r}")
        year, mon = int(parts[0]), int(parts[1])
    else:
        year, mon = month
    if not 1 <= mon <= 12:
        raise ValueError(f"month number out of range: {mon}")
    return year, mon


def month_start(year: int, mon: int) -> datetime:
    return datetime(year, mon, 1)


def add_months(year: int, mon: int, k: int) -> tuple[int, int]:
    base = (year * 12 + mon - 1) + k
    return base // 12, base % 12 + 1


def month_label(year: int, mon: int) -> str:
    return f"{year:04d}-{mon:02d}"


def hours_in_months(year: int, mon: int, count: int) -> int:
    total = 0
    for k in range(count):
        y, m = add_months(year, mon, k)
        total += monthrange(y, m)[1] * 24
    return total


@dataclass(frozen=True)
class SlidingWindowSplit:
    """Half-open train/test intervals: exactly 3 calendar months, then 1 month."""

    train_start: datetime
    train_end: datetime
    test_start: datetime
    test_end: datetime

    def __post_init__(self):
        if self.train_end != self.test_start:
            raise ValueError("train range must immediately precede the test range")
        y, m = self.train_start.year, self.train_start.month
        ty, tm = add_months(y, m, 3)
        if self.train_end != month_start(ty, tm):
            raise ValueError("train range must span exactly 3 calendar months")

    @property
    def test_month(self) -> str:
        return month_label(self.test_start.year, self.test_start.month)

    def train_hours(self) -> int:
        return int((self.train_end - self.train_start) / HOUR)

    def test_hours(self) -> int:
        return int((self.test_end - self.test_start) / HOUR)


def make_windows(records, first_test_month, last_test_month) -> list[SlidingWindowSplit]:
    """One split per test month; each trains on the 3 preceding calendar months.

    ``records`` must be a single zone's series. Raises :class:`CoverageError`
    naming the first month that the data does not cover.
    """
    if not records:
        raise CoverageError("no records supplied")
    zones = {r.zone for r in records}
    if len(zones) != 1:
        raise ValueError(f"make_windows expects a single zone, got zones {sorted(zones)}")

    first = parse_month(first_test_month)
    last = parse_month(last_test_month)
    if first > last:
        raise ValueError("first_test_month is after last_test_month")

    data_start = records[0].timestamp
    data_end = records[-1].timestamp + HOUR  # half-open

    splits = []
    y, m = first
    while (y, m) <= last:
        train_y, train_m = add_months(y, m, -3)
        split = SlidingWindowSplit(
            train_start=month_start(train_y, train_m),
            train_end=month_start(y, m),
            test_start=month_start(y, m),
            test_end=month_start(*add_months(y, m, 1)),
        )
        for k in range(3):
            my, mm = add_months(train_y, train_m, k)
            start, end = month_start(my, mm), month_start(*add_months(my, mm, 1))
            if start < data_start or end > data_end:
                raise CoverageError(f"data does not cover training month {month_label(my, mm)}")
        if split.test_start < data_start or split.test_end > data_end:
            raise CoverageError(f"data does not cover test month {month_label(y, m)}")
        splits.append(split)
        y, m = add_months(y, m, 1)
    return splits


@dataclass(frozen=True)
class MinMaxScaler:
    """Per-column (min, max) learned from the training rows only."""

    col_min: np.ndarray
    col_max: np.ndarray

    def __post_init__(self):
        self.col_min.setflags(write=False)
        self.col_max.setflags(write=False)


def fit_minmax_scaler(X) -> MinMaxScaler:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.size == 0:
        raise ValueError("scaler requires a nonempty 2-D matrix")
    return MinMaxScaler(X.min(axis=0).copy(), X.max(axis=0).copy())


def apply_minmax(scaler: MinMaxScaler, X) -> np.ndarray:
    """Map columns onto [0,1]; out-of-range values clamp, constant columns map to 0."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != scaler.col_min.shape[0]:
        raise ValueError("matrix width does not match the fitted scaler")
    span = scaler.col_max - scaler.col_min
    safe = np.where(span > 0, span, 1.0)
    out = (X - scaler.col_min) / safe
    out[:, span == 0] = 0.0
    return np.clip(out, 0.0, 1.0)


def drop_missing_power(records, context: str = "") -> list[TimeSeriesRecord]:
    """Remove power-absent rows, logging how many were dropped."""
    kept = [r for r in records if r.has_power]
    dropped = len(records) - len(kept)
    if dropped:
        logger.info("dropped %d rows with missing power%s",
                    dropped, f" ({context})" if context else "")
    return kept
