"""Demand streams: CSV ingestion/export, daily batching and synthetic data."""

import csv
import math
import warnings
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.signal import lfilter

from .errors import ContractError, DataError


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class PartialBatchWarning(UserWarning):
    pass


class GapWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Calendar:
    """Business-hour calendar: ``hours_per_day`` slots starting at ``first_hour``."""

    hours_per_day: int = 15
    first_hour: int = 9
    days_per_week: int = 7

    def __post_init__(self):
        if not 1 <= self.hours_per_day <= 24:
            raise ContractError("hours_per_day must lie in 1..24")
        if not 0 <= self.first_hour <= 23:
            raise ContractError("first_hour must lie in 0..23")
        if self.first_hour + self.hours_per_day > 24:
            raise ContractError("business day must end by midnight")
        if self.days_per_week != 7:
            raise ContractError("only 7-day weeks are supported")

    @property
    def last_hour(self):
        return self.first_hour + self.hours_per_day - 1

    @property
    def week_length(self):
        return self.hours_per_day * self.days_per_week


PLATFORM_CALENDAR = Calendar(15, 9)
DAY_24H_CALENDAR = Calendar(24, 0)


@dataclass(frozen=True)
class Holiday:
    """A named holiday: fixed calendar dates and/or (month, day) recurrences."""

    name: str
    dates: frozenset = frozenset()
    recurring: frozenset = frozenset()

    def mask(self, days):
        """Boolean mask over an array of ``datetime64[D]`` values."""
        days = np.asarray(days, dtype="datetime64[D]")
        out = np.zeros(days.shape, dtype=bool)
        if self.dates:
            out |= np.isin(days, np.array(sorted(self.dates), dtype="datetime64[D]"))
        if self.recurring:
            months = days.astype("datetime64[M]")
            month_no = months.astype(np.int64) % 12 + 1
            dom = (days - months).astype(np.int64) + 1
            for m, d in self.recurring:
                out |= (month_no == m) & (dom == d)
        return out


def default_holidays():
    return {
        "christmas": Holiday("christmas", recurring=frozenset({(12, 25)})),
        "new_year": Holiday("new_year", recurring=frozenset({(1, 1)})),
    }


@dataclass(frozen=True, eq=False)
class DemandStream:
    """Hourly demand for one area, contiguous in business-hour time.

    ``origin`` is the first business hour of the first day; observation
    ``t`` falls on day ``t // H`` at slot ``t % H``.
    """

    stream_id: str
    calendar: Calendar
    origin: datetime
    values: np.ndarray
    holidays: Mapping[str, Holiday] = field(default_factory=default_holidays)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim != 1:
            raise DataError("values must be one-dimensional")
        if not np.all(np.isfinite(vals)):
            raise DataError(f"stream {self.stream_id}: non-finite demand")
        if np.any(vals < 0):
            raise DataError(f"stream {self.stream_id}: negative demand")
        if self.origin.hour != self.calendar.first_hour or self.origin.minute:
            raise DataError("origin must be the first business hour of a day")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "holidays", dict(self.holidays))

    def __len__(self):
        return self.values.shape[0]

    @property
    def origin_day(self):
        return np.datetime64(self.origin.date(), "D")

    def days_of(self, t):
        """Calendar date (``datetime64[D]``) of global observation indices."""
        return self.origin_day + np.asarray(t, dtype=np.int64) // self.calendar.hours_per_day

    def minutes_since_origin(self, t):
        H = self.calendar.hours_per_day
        t = np.asarray(t, dtype=np.int64)
        return (t // H) * 1440 + (t % H) * 60

    def timestamp(self, t):
        H = self.calendar.hours_per_day
        return self.origin + timedelta(days=int(t) // H, hours=int(t) % H)

    @property
    def holiday_flags(self):
        days = self.days_of(np.arange(len(self)))
        return {name: h.mask(days) for name, h in self.holidays.items()}

    def with_values(self, values):
        return DemandStream(self.stream_id, self.calendar, self.origin, values, self.holidays)


@dataclass(frozen=True)
class BatchWindow:
    batch_index: int
    start: int
    observations: np.ndarray
    timestamps: tuple


def _parse_timestamp(text, line):
    try:
        ts = datetime.fromisoformat(text.strip())
    except ValueError:
        raise ParseError(f"bad timestamp {text!r}", line) from None
    if ts.minute or ts.second or ts.microsecond or ts.tzinfo is not None:
        raise ParseError(f"timestamp {text!r} is not on the hour", line)
    return ts


def _data_lines(handle):
    # comment lines (e.g. "# seed=...") are allowed anywhere
    for lineno, raw in enumerate(handle, start=1):
        if raw.lstrip().startswith("#") or not raw.strip():
            continue
        yield lineno, raw


def _business_slot(ts, calendar):
    """Map a wall-clock hour to (business date, slot), folding off-hours
    demand into the last business hour of its business day."""
    hr = ts.hour
    if hr < calendar.first_hour:
        return ts.date() - timedelta(days=1), calendar.hours_per_day - 1
    if hr > calendar.last_hour:
        return ts.date(), calendar.hours_per_day - 1
    return ts.date(), hr - calendar.first_hour


def load_holidays(path):
    """Read a ``date,name`` holiday file into a name -> Holiday mapping."""
    found = {}
    with open(path, newline="", encoding="utf-8") as fh:
        lines = list(_data_lines(fh))
    if not lines or [c.strip() for c in lines[0][1].strip().split(",")] != ["date", "name"]:
        raise ParseError("holiday file must start with header 'date,name'", lines[0][0] if lines else 1)
    for lineno, raw in lines[1:]:
        parts = next(csv.reader([raw]))
        if len(parts) != 2:
            raise ParseError("expected 2 fields", lineno)
        try:
            d = date.fromisoformat(parts[0].strip())
        except ValueError:
            raise ParseError(f"bad date {parts[0]!r}", lineno) from None
        found.setdefault(parts[1].strip(), set()).add(d)
    return {name: Holiday(name, dates=frozenset(ds)) for name, ds in found.items()}


def ingest_csv(path, calendar=PLATFORM_CALENDAR, holidays=None):
    """Read ``timestamp,stream_id,demand`` rows into one stream per id.

    Hours outside the calendar are added to the last business hour of
    their business day and missing business hours become 0.  Returns a
    dict keyed by stream id, sorted by id.
    """
    if holidays is None:
        holidays = default_holidays()
    cells = {}
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        lines = _data_lines(fh)
        try:
            hline, header = next(lines)
        except StopIteration:
            raise ParseError("empty file", 1) from None
        if [c.strip() for c in header.strip().split(",")] != ["timestamp", "stream_id", "demand"]:
            raise ParseError("header must be 'timestamp,stream_id,demand'", hline)
        for lineno, raw in lines:
            parts = next(csv.reader([raw]))
            if len(parts) != 3:
                raise ParseError(f"expected 3 fields, got {len(parts)}", lineno)
            ts = _parse_timestamp(parts[0], lineno)
            sid = parts[1].strip()
            if not sid:
                raise ParseError("empty stream_id", lineno)
            try:
                demand = float(parts[2])
            except ValueError:
                raise ParseError(f"bad demand {parts[2]!r}", lineno) from None
            if not math.isfinite(demand):
                raise ParseError("non-finite demand", lineno)
            if demand < 0:
                raise DataError(f"line {lineno}: negative demand {demand}")
            if (sid, ts) in seen:
                raise DataError(f"line {lineno}: duplicate row for stream {sid!r} at {ts.isoformat()}")
            seen.add((sid, ts))
            day, slot = _business_slot(ts, calendar)
            key = (day, slot)
            per = cells.setdefault(sid, {})
            per[key] = per.get(key, 0.0) + demand

    H = calendar.hours_per_day
    streams = {}
    for sid in sorted(cells):
        per = cells[sid]
        first_day = min(d for d, _ in per)
        last_day, last_slot = max(per)
        n = (last_day - first_day).days * H + last_slot + 1
        values = np.zeros(n)
        idx = np.array([(d - first_day).days * H + s for d, s in per], dtype=np.int64)
        values[idx] = np.fromiter(per.values(), dtype=np.float64, count=len(per))
        _warn_long_gaps(sid, np.sort(idx), H)
        origin = datetime.combine(first_day, datetime.min.time()).replace(hour=calendar.first_hour)
        streams[sid] = DemandStream(sid, calendar, origin, values, holidays)
    return streams


def _warn_long_gaps(sid, idx, H):
    if idx.shape[0] < 2:
        return
    longest = int(np.max(np.diff(idx))) - 1
    if longest > 7 * H:
        warnings.warn(f"stream {sid}: gap of {longest} business hours zero-filled", GapWarning, stacklevel=3)


def export_csv(streams, path, seed=None):
    """Write streams in the ingestion format (inverse of ``ingest_csv``)."""
    if isinstance(streams, DemandStream):
        streams = [streams]
    elif isinstance(streams, Mapping):
        streams = list(streams.values())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if seed is not None:
            fh.write(f"# seed={seed}\n")
        fh.write("timestamp,stream_id,demand\n")
        for s in streams:
            for t, v in enumerate(s.values):
                fh.write(f"{s.timestamp(t).strftime('%Y-%m-%dT%H:00')},{s.stream_id},{float(v)!r}\n")


def batch_iterator(stream):
    """Split a stream into consecutive whole-day batches (index from 1)."""
    H = stream.calendar.hours_per_day
    n_full = len(stream) // H
    leftover = len(stream) - n_full * H
    if n_full == 0:
        warnings.warn(f"stream {stream.stream_id}: shorter than one batch", PartialBatchWarning, stacklevel=2)
        return []
    if leftover:
        warnings.warn(
            f"stream {stream.stream_id}: trailing partial day of {leftover} observations excluded",
            PartialBatchWarning,
            stacklevel=2,
        )
    out = []
    for b in range(n_full):
        start = b * H
        out.append(
            BatchWindow(
                batch_index=b + 1,
                start=start,
                observations=stream.values[start:start + H],
                timestamps=tuple(stream.timestamp(t) for t in range(start, start + H)),
            )
        )
    return out


# Rough intraday and weekly shapes of urban delivery demand.
_PLATFORM_HOUR_PROFILE = (0.3, 0.5, 0.7, 0.9, 1.2, 1.1, 0.9, 0.8, 0.9, 1.1, 1.5, 1.6, 1.3, 0.7, 0.4)
_PLATFORM_DOW_PROFILE = (0.9, 0.9, 0.95, 1.0, 1.1, 1.15, 1.0)


@dataclass(frozen=True)
class SyntheticConfig:
    """Settings for ``generate_synthetic``.

    The deterministic level is ``base_level * (1 + trend_slope * day) *
    hour_profile[h] * dow_profile[weekday]`` times every shock multiplier
    whose day has been reached.  Deviations from the level follow an AR
    process on lag 1 and lag one-week with Gaussian innovations of standard
    deviation ``noise_scale * sqrt(level)``.
    """

    days: int = 180
    calendar: Calendar = PLATFORM_CALENDAR
    start: date = date(2019, 1, 7)
    base_level: float = 20.0
    trend_slope: float = 0.0
    hour_profile: Sequence[float] | None = None
    dow_profile: Sequence[float] | None = None
    ar_lag1: float = 0.0
    ar_week: float = 0.0
    noise_scale: float = 0.0
    shocks: tuple = ()
    stream_id: str = "synthetic"


def generate_synthetic(config, seed):
    if config.days <= 0:
        raise DataError("number of days must be positive")
    cal = config.calendar
    H = cal.hours_per_day
    hp = np.ones(H) if config.hour_profile is None else np.asarray(config.hour_profile, dtype=np.float64)
    dp = np.ones(7) if config.dow_profile is None else np.asarray(config.dow_profile, dtype=np.float64)
    if hp.shape != (H,) or dp.shape != (7,):
        raise DataError("profile lengths must match the calendar")
    T = config.days * H
    t = np.arange(T)
    day = t // H
    weekday = (config.start.weekday() + day) % 7
    level = config.base_level * (1.0 + config.trend_slope * day) * hp[t % H] * dp[weekday]
    for shock_day, mult in config.shocks:
        level = np.where(day >= shock_day, level * mult, level)

    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(T) * config.noise_scale * np.sqrt(np.maximum(level, 0.0))
    a = np.zeros(7 * H + 1)
    a[0] = 1.0
    a[1] -= config.ar_lag1
    a[7 * H] -= config.ar_week
    dev = lfilter([1.0], a, eps)
    values = np.maximum(np.rint(level + dev), 0.0)
    origin = datetime.combine(config.start, datetime.min.time()).replace(hour=cal.first_hour)
    return DemandStream(config.stream_id, cal, origin, values)


def platform_like_config(**overrides):
    """A synthetic configuration shaped like the delivery-platform data."""
    base = dict(
        hour_profile=_PLATFORM_HOUR_PROFILE,
        dow_profile=_PLATFORM_DOW_PROFILE,
        trend_slope=0.001,
        ar_lag1=0.3,
        ar_week=0.1,
        noise_scale=1.0,
    )
    base.update(overrides)
    return SyntheticConfig(**base)


def concat_batches(batches: Iterable[BatchWindow]):
    return np.concatenate([b.observations for b in batches]) if batches else np.empty(0)
