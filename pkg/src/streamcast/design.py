"""Regression design for seasonal/trend/lag demand models and forecasting.

A model is described declaratively by :class:`ModelSpec`; the design
matrix has, in order, trend powers, day-of-week dummies (Monday dropped),
hour-of-day dummies (all retained, there is no intercept), month dummies
(January dropped), holiday dummies and one column per (hour group, lag).
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .config import format_kv, parse_kv
from .errors import ContractError, EmptyDesignError, InsufficientDataError

TREND_SCALE = 10_000.0


@dataclass(frozen=True)
class LagGroup:
    hours: tuple  # 1-based hour-of-day slots
    lags: tuple


@dataclass(frozen=True)
class ModelSpec:
    trend_order: int = 1
    day_dummies: bool = True
    hour_dummies: bool = True
    month_dummies: bool = False
    max_lag: int = 0
    lag_groups: tuple = ()
    holiday_dummies: tuple = ()
    restriction_mode: str = "domain"

    def __post_init__(self):
        object.__setattr__(self, "lag_groups", tuple(
            LagGroup(tuple(int(h) for h in g.hours), tuple(sorted(int(i) for i in g.lags)))
            for g in self.lag_groups
        ))
        object.__setattr__(self, "holiday_dummies", tuple(self.holiday_dummies))
        if self.trend_order < 0 or self.max_lag < 0:
            raise ContractError("trend_order and max_lag must be non-negative")
        if self.restriction_mode not in ("domain", "data_driven"):
            raise ContractError(f"unknown restriction_mode {self.restriction_mode!r}")
        for g in self.lag_groups:
            for i in g.lags:
                if not 1 <= i <= self.max_lag:
                    raise ContractError(f"lag {i} outside 1..{self.max_lag}")
        if self.restriction_mode == "data_driven":
            full = tuple(range(1, self.max_lag + 1))
            if any(g.lags != full for g in self.lag_groups):
                raise ContractError("data_driven mode needs the full lag set in every group")

    def validate(self, calendar):
        if not self.lag_groups:
            return
        hours = sorted(h for g in self.lag_groups for h in g.hours)
        if hours != list(range(1, calendar.hours_per_day + 1)):
            raise ContractError("lag groups must partition hours 1..hours_per_day")

    def column_labels(self, calendar):
        labels = [f"trend_{j}" for j in range(1, self.trend_order + 1)]
        if self.day_dummies:
            labels += [f"day_{d}" for d in range(2, 8)]
        if self.hour_dummies:
            labels += [f"hour_{h}" for h in range(1, calendar.hours_per_day + 1)]
        if self.month_dummies:
            labels += [f"month_{m}" for m in range(2, 13)]
        labels += [f"holiday_{name}" for name in self.holiday_dummies]
        for g, grp in enumerate(self.lag_groups, start=1):
            labels += [f"lag_g{g}_{i}" for i in grp.lags]
        return labels

    def n_deterministic(self, calendar):
        return len(self.column_labels(calendar)) - self.n_lag_columns

    @property
    def n_lag_columns(self):
        return sum(len(g.lags) for g in self.lag_groups)

    def penalized_mask(self, calendar):
        """Lag columns are penalised by the lasso; deterministic ones are not."""
        labels = self.column_labels(calendar)
        return np.array([lab.startswith("lag_") for lab in labels])

    def lag_coefficient_matrix(self, lag_coefs, calendar):
        """Expand lag coefficients (in column order) to an H x max_lag matrix."""
        A = np.zeros((calendar.hours_per_day, self.max_lag))
        k = 0
        for grp in self.lag_groups:
            rows = np.asarray(grp.hours) - 1
            for i in grp.lags:
                A[rows, i - 1] = lag_coefs[k]
                k += 1
        return A

    def with_lags_at_most(self, max_lag):
        """Drop every lag above ``max_lag`` (used by the small-sample fallback)."""
        groups = tuple(LagGroup(g.hours, tuple(i for i in g.lags if i <= max_lag)) for g in self.lag_groups)
        return replace(self, lag_groups=groups, max_lag=min(self.max_lag, max_lag), restriction_mode="domain")

    def to_text(self):
        items = [
            ("trend_order", self.trend_order),
            ("day_dummies", str(self.day_dummies).lower()),
            ("hour_dummies", str(self.hour_dummies).lower()),
            ("month_dummies", str(self.month_dummies).lower()),
            ("max_lag", self.max_lag),
            ("restriction_mode", self.restriction_mode),
            ("holidays", ",".join(self.holiday_dummies)),
        ]
        for g in self.lag_groups:
            items.append(("lag_groups", f"hours={_format_ints(g.hours)};lags={_format_ints(g.lags)}"))
        return format_kv(items)

    @classmethod
    def from_text(cls, text):
        kwargs = {}
        groups = []
        for key, value in parse_kv(text):
            if key == "lag_groups":
                groups.append(_parse_group(value))
            elif key in ("trend_order", "max_lag"):
                kwargs[key] = int(value)
            elif key in ("day_dummies", "hour_dummies", "month_dummies"):
                kwargs[key] = _parse_bool(key, value)
            elif key == "restriction_mode":
                kwargs[key] = value
            elif key == "holidays":
                kwargs["holiday_dummies"] = tuple(v for v in (x.strip() for x in value.split(",")) if v)
            else:
                raise ContractError(f"unknown model spec key {key!r}")
        return cls(lag_groups=tuple(groups), **kwargs)


def _format_ints(values):
    values = list(values)
    parts = []
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[j + 1] == values[j] + 1:
            j += 1
        if j - i >= 2:
            parts.append(f"{values[i]}-{values[j]}")
        else:
            parts.extend(str(v) for v in values[i:j + 1])
        i = j + 1
    return ",".join(parts)


def _parse_ints(text):
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return tuple(out)


def _parse_group(text):
    fields = dict(p.split("=", 1) for p in text.split(";"))
    try:
        return LagGroup(_parse_ints(fields["hours"]), _parse_ints(fields["lags"]))
    except KeyError as exc:
        raise ContractError(f"lag group entry missing {exc.args[0]!r}: {text!r}") from None


def _parse_bool(key, value):
    v = value.strip().lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no"):
        return False
    raise ContractError(f"{key} must be true/false, got {value!r}")


def default_platform_spec(mode="domain"):
    """The 15-hour delivery-platform model: linear trend, day and hour
    dummies, Christmas/New Year dummies and morning/afternoon/evening lag
    groups.  ``mode="data"`` keeps every lag 1..105 in each group for the
    lasso to prune."""
    groups = (
        LagGroup(tuple(range(1, 5)), (105,)),
        LagGroup(tuple(range(5, 14)), (1, 15, 105)),
        LagGroup((14, 15), (1, 105)),
    )
    restriction = "domain"
    if mode == "data":
        full = tuple(range(1, 106))
        groups = tuple(LagGroup(g.hours, full) for g in groups)
        restriction = "data_driven"
    elif mode != "domain":
        raise ContractError(f"unknown mode {mode!r}")
    return ModelSpec(
        trend_order=1,
        day_dummies=True,
        hour_dummies=True,
        max_lag=105,
        lag_groups=groups,
        holiday_dummies=("christmas", "new_year"),
        restriction_mode=restriction,
    )


def hourly_24h_spec():
    """Round-the-clock configuration: trend, hour/day/month dummies and a
    full week (168) of lags selected by the lasso."""
    return ModelSpec(
        trend_order=1,
        day_dummies=True,
        hour_dummies=True,
        month_dummies=True,
        max_lag=168,
        lag_groups=(LagGroup(tuple(range(1, 25)), tuple(range(1, 169))),),
        restriction_mode="data_driven",
    )


@dataclass
class DesignMatrix:
    predictors: np.ndarray
    targets: np.ndarray
    column_labels: list
    row_index: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def n_rows(self):
        return self.predictors.shape[0]

    def row_timestamps(self, stream):
        return [stream.timestamp(t) for t in self.row_index]


@dataclass(frozen=True)
class TimeFrame:
    """What the design needs to know about time: calendar, origin date and
    holiday definitions.  Shared by whole streams and engine buffers."""

    calendar: object
    origin_day: np.datetime64
    holidays: dict

    @classmethod
    def of(cls, stream):
        return cls(stream.calendar, stream.origin_day, stream.holidays)


def deterministic_block(t, frame, spec):
    """Trend, seasonal and holiday columns for global indices ``t``."""
    t = np.asarray(t, dtype=np.int64)
    H = frame.calendar.hours_per_day
    n = t.shape[0]
    cols = []
    scaled = (t + 1) / TREND_SCALE
    for j in range(1, spec.trend_order + 1):
        cols.append(scaled ** j)
    days = frame.origin_day + t // H
    if spec.day_dummies:
        # datetime64 day 0 (1970-01-01) was a Thursday; ISO weekday 1 = Monday
        iso = (days.astype(np.int64) + 3) % 7 + 1
        for d in range(2, 8):
            cols.append((iso == d).astype(np.float64))
    if spec.hour_dummies:
        slot = t % H
        for h in range(H):
            cols.append((slot == h).astype(np.float64))
    if spec.month_dummies:
        month = days.astype("datetime64[M]").astype(np.int64) % 12 + 1
        for m in range(2, 13):
            cols.append((month == m).astype(np.float64))
    for name in spec.holiday_dummies:
        try:
            hol = frame.holidays[name]
        except KeyError:
            raise ContractError(f"holiday {name!r} not defined for this stream") from None
        cols.append(hol.mask(days).astype(np.float64))
    if not cols:
        return np.empty((n, 0))
    return np.column_stack(cols)


def lag_block(values, offset, t, frame, spec):
    """Grouped lag columns; ``values[k]`` holds the observation at global
    index ``offset + k``."""
    t = np.asarray(t, dtype=np.int64)
    H = frame.calendar.hours_per_day
    hour = t % H + 1
    cols = []
    for grp in spec.lag_groups:
        member = np.isin(hour, grp.hours).astype(np.float64)
        for i in grp.lags:
            cols.append(member * values[t - i - offset])
    if not cols:
        return np.empty((t.shape[0], 0))
    return np.column_stack(cols)


def design_rows(values, offset, t, frame, spec):
    t = np.asarray(t, dtype=np.int64)
    if t.shape[0] and t.min() - spec.max_lag < offset:
        raise ContractError("lag regressors reach before the available data")
    X = np.hstack([deterministic_block(t, frame, spec), lag_block(values, offset, t, frame, spec)])
    return X, values[t - offset].astype(np.float64)


def build_design(stream, spec, start=None, stop=None):
    """Design matrix for target observations ``start <= t < stop``.

    Lags may reach back before ``start`` (but not before the stream).
    """
    spec.validate(stream.calendar)
    start = spec.max_lag if start is None else int(start)
    stop = len(stream) if stop is None else int(stop)
    if start < spec.max_lag:
        raise ContractError(f"range must start at or after observation {spec.max_lag} so all lags resolve")
    if stop > len(stream):
        raise ContractError("range extends past the end of the stream")
    if stop <= start:
        raise EmptyDesignError(f"no usable rows in [{start}, {stop})")
    frame = TimeFrame.of(stream)
    t = np.arange(start, stop)
    X, y = design_rows(stream.values, 0, t, frame, spec)
    return DesignMatrix(X, y, spec.column_labels(stream.calendar), t)


def forecast_from_tail(coefficients, spec, frame, tail, t_next, horizon, clip=False):
    """Recursive forecasts for global indices ``t_next .. t_next+horizon-1``.

    ``coefficients`` follow ``spec.column_labels`` order and ``tail`` holds
    at least the last ``max_lag`` observations before ``t_next``.
    """
    if horizon < 1:
        raise ContractError("horizon must be at least 1")
    coefficients = np.asarray(coefficients, dtype=np.float64)
    n_det = coefficients.shape[0] - spec.n_lag_columns
    t = np.arange(t_next, t_next + horizon)
    det = deterministic_block(t, frame, spec) @ coefficients[:n_det]
    P = spec.max_lag
    if P:
        tail = np.asarray(tail, dtype=np.float64)
        if tail.shape[0] < P:
            raise InsufficientDataError(f"need {P} past observations to forecast")
        A = spec.lag_coefficient_matrix(coefficients[n_det:], frame.calendar)
        hours = t % frame.calendar.hours_per_day
        out = kernels.recursive_forecast(det, tail[-P:], A, hours)
    else:
        out = det
    return np.maximum(out, 0.0) if clip else out


def forecast_recursive(coefficients, labels, stream, spec, horizon, clip=False):
    """Forecast the ``horizon`` observations following the end of ``stream``.

    Lag terms use actual values where available and earlier forecasts
    otherwise.  ``labels`` name the entries of ``coefficients``; labels
    missing from the model spec raise ContractError, model columns without a
    coefficient are taken as zero.
    """
    expected = spec.column_labels(stream.calendar)
    pos = {lab: k for k, lab in enumerate(expected)}
    beta = np.zeros(len(expected))
    for lab, value in zip(labels, np.asarray(coefficients, dtype=np.float64)):
        if lab not in pos:
            raise ContractError(f"unknown column label {lab!r}")
        beta[pos[lab]] = value
    if len(stream) < spec.max_lag:
        raise InsufficientDataError(f"need {spec.max_lag} observations to resolve lags")
    return forecast_from_tail(beta, spec, TimeFrame.of(stream), stream.values, len(stream), horizon, clip)


def naive_from_tail(tail, horizon, season_length):
    tail = np.asarray(tail, dtype=np.float64)
    if tail.shape[0] < season_length:
        raise InsufficientDataError(f"need {season_length} observations for the naive forecast")
    season = tail[tail.shape[0] - season_length:]
    return season[np.arange(horizon) % season_length].copy()


def naive_forecast(stream, horizon, season_length):
    """Seasonal random walk: repeat the last ``season_length`` observations."""
    values = stream.values if hasattr(stream, "values") else stream
    return naive_from_tail(values, horizon, season_length)
