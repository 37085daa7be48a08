"""Per-stream orchestration: forecast, score, test for breakdowns, reset.

Each day (batch) the engine scores yesterday's one-day-ahead forecast,
appends the summed loss to the loss stream, runs the change-point
detector on it and, on a detected breakdown, restarts the post-break
sample at the first day after the break.  The full-sample and post-break
forecasts are then combined as ``w * FULL + (1 - w) * POST``.
"""

import math
import struct
from collections import deque
from dataclasses import dataclass, field, fields

import numpy as np

from .changepoint import MIN_SEGLEN, get_detector
from .errors import ContractError, InsufficientDataError
from .forecasters import NaiveForecaster, make_forecaster
from .losses import ALL_LOSSES, SQUARED, LossFunctionSpec, LossStream, batch_loss, pointwise_loss
from .timeseries_io import batch_iterator

FALLBACKS = ("full_only", "lag1_lasso", "naive")
CHECKPOINT_MAGIC = b"SCKPT001"


@dataclass
class EngineConfig:
    w: float = 0.5
    horizon: int = 105
    detection_loss: LossFunctionSpec = SQUARED
    detector: str = "pelt"
    penalty: float | None = None  # None: 3 log(n) of the current loss stream
    min_seglen: int = MIN_SEGLEN
    min_losses_before_test: int = 10
    break_date_policy: str = "earliest"
    fallback: str = "full_only"
    mode: str = "domain"
    clip_negative: bool = False
    lambda_refresh: int = 7

    def __post_init__(self):
        if not 0.0 <= self.w <= 1.0:
            raise ContractError("combination weight w must lie in [0, 1]")
        if self.horizon < 1:
            raise ContractError("horizon must be positive")
        if self.break_date_policy not in ("earliest", "latest"):
            raise ContractError(f"unknown break_date_policy {self.break_date_policy!r}")
        if self.fallback not in FALLBACKS:
            raise ContractError(f"unknown fallback {self.fallback!r}")
        if self.mode not in ("domain", "data"):
            raise ContractError(f"unknown mode {self.mode!r}")
        if self.penalty is not None and self.penalty < 0:
            raise ContractError("penalty must be non-negative")
        get_detector(self.detector)

    def to_items(self):
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "detection_loss":
                v = v.kind
            elif f.name == "penalty":
                v = "auto" if v is None else repr(v)
            elif isinstance(v, bool):
                v = str(v).lower()
            out.append((f.name, v))
        return out

    @classmethod
    def from_items(cls, items):
        kwargs = {}
        for key, value in items:
            if key not in _CONFIG_PARSERS:
                raise ContractError(f"unknown engine config key {key!r}")
            try:
                kwargs[key] = _CONFIG_PARSERS[key](value)
            except ValueError as exc:
                raise ContractError(f"bad value for {key}: {value!r} ({exc})") from None
        return cls(**kwargs)


def _parse_penalty(text):
    return None if text.strip().lower() == "auto" else float(text)


def _parse_bool(text):
    v = text.strip().lower()
    if v not in ("true", "false", "1", "0"):
        raise ValueError("expected true/false")
    return v in ("true", "1")


_CONFIG_PARSERS = {
    "w": float,
    "horizon": int,
    "detection_loss": LossFunctionSpec.parse,
    "detector": str,
    "penalty": _parse_penalty,
    "min_seglen": int,
    "min_losses_before_test": int,
    "break_date_policy": str,
    "fallback": str,
    "mode": str,
    "clip_negative": _parse_bool,
    "lambda_refresh": int,
}


@dataclass
class BreakEvent:
    detection_batch: int
    break_batch: int  # last batch of the pre-break segment
    post_break_start: int  # observation index
    policy: str
    breakpoints: list


@dataclass
class IssuedForecast:
    issue_batch: int
    combined: np.ndarray
    full: np.ndarray
    post: np.ndarray
    weight: float
    actuals: np.ndarray


@dataclass
class EngineState:
    forecaster: object
    hours_per_day: int
    loss_stream: LossStream
    post_break_start: int = 0
    pending: deque = field(default_factory=deque)
    break_log: list = field(default_factory=list)
    last_batch: int = 0
    seed: int = 0

    def checkpoint(self, horizon):
        """Fixed-size binary snapshot of the estimation state."""
        days = -(-horizon // self.hours_per_day)
        pend = np.full((days, horizon), np.nan)
        issued = np.zeros(days, dtype="<i8")
        for k, item in enumerate(list(self.pending)[-days:]):
            pend[k] = item.combined
            issued[k] = item.issue_batch
        return b"".join([
            CHECKPOINT_MAGIC,
            struct.pack("<qqqq", self.seed, self.last_batch, self.post_break_start, horizon),
            self.forecaster.checkpoint(),
            issued.tobytes(),
            pend.astype("<f8").tobytes(),
        ])


def combine(full, post, w):
    """``w * full + (1 - w) * post`` elementwise.

    Written as ``full + (1 - w) * (post - full)`` so that identical inputs
    come back unchanged; the clip absorbs rounding at extreme magnitudes.
    """
    full = np.asarray(full, dtype=np.float64)
    post = np.asarray(post, dtype=np.float64)
    if full.shape != post.shape:
        raise ContractError("forecast vectors differ in length")
    if not 0.0 <= w <= 1.0:
        raise ContractError("combination weight w must lie in [0, 1]")
    if w == 1.0:
        return full.copy()
    if w == 0.0:
        return post.copy()
    out = full + (1.0 - w) * (post - full)
    return np.clip(out, np.minimum(full, post), np.maximum(full, post))


def init_state(forecaster, initial_values, hours_per_day, config, seed=0):
    """Fit on the initial batches and issue the first forecast.

    Full-sample and post-break forecasts coincide at this point.
    """
    initial_values = np.asarray(initial_values, dtype=np.float64)
    if initial_values.shape[0] % hours_per_day:
        raise ContractError("initial data must consist of whole batches")
    forecaster.initialize(initial_values)
    state = EngineState(forecaster, hours_per_day, LossStream(), seed=seed)
    state.last_batch = initial_values.shape[0] // hours_per_day
    state.loss_stream.start_batch = state.last_batch + 1
    full = forecaster.forecast_full(config.horizon)
    state.pending.append(_issue(state.last_batch, full, full, full, 1.0))
    return state, full


def _issue(batch, combined, full, post, weight):
    return IssuedForecast(batch, combined, full, post, weight, np.full(combined.shape[0], np.nan))


def _score_pending(state, batch):
    """Record the new actuals against every outstanding forecast; returns
    the one-day-ahead forecast slice and the forecasts now fully realised."""
    H = state.hours_per_day
    one_day = None
    done = []
    for item in state.pending:
        k = batch.batch_index - item.issue_batch - 1
        lo, hi = k * H, min((k + 1) * H, item.combined.shape[0])
        if lo < item.combined.shape[0]:
            item.actuals[lo:hi] = batch.observations[:hi - lo]
        if k == 0:
            one_day = item.combined[:H]
    while state.pending and (batch.batch_index - state.pending[0].issue_batch) * H >= state.pending[0].combined.shape[0]:
        done.append(state.pending.popleft())
    return one_day, done


def _detect(state, config):
    values = state.loss_stream.as_array()
    if values.shape[0] < max(config.min_losses_before_test, 2 * config.min_seglen):
        return None
    result = get_detector(config.detector)(values, config.penalty, config.min_seglen)
    if not result.tested or not result.found:
        return None
    return result


def step(state, batch, config):
    """Process one new batch; returns (combined forecast, events).

    Events are dicts with a ``type`` of ``"loss"``, ``"break"``,
    ``"fallback"``, ``"error"`` or ``"completed"`` (the latter carrying a
    fully realised :class:`IssuedForecast`).
    """
    H = state.hours_per_day
    if batch.batch_index != state.last_batch + 1:
        raise ContractError(f"expected batch {state.last_batch + 1}, got {batch.batch_index}")
    if batch.observations.shape[0] != H:
        raise ContractError("batch size differs from the calendar")
    events = []

    one_day, done = _score_pending(state, batch)
    if one_day is not None:
        loss = batch_loss(batch.observations[:one_day.shape[0]], one_day, config.detection_loss)
        if not state.loss_stream.values:
            state.loss_stream.start_batch = batch.batch_index
        state.loss_stream.append(loss)
        events.append({"type": "loss", "batch": batch.batch_index, "value": loss})

    result = _detect(state, config)
    if result is not None:
        pos = result.breakpoints[0] if config.break_date_policy == "earliest" else result.breakpoints[-1]
        break_batch = state.loss_stream.start_batch + pos - 1
        state.post_break_start = break_batch * H
        state.loss_stream.truncate_after(pos)
        ev = BreakEvent(batch.batch_index, break_batch, state.post_break_start,
                        config.break_date_policy, list(result.breakpoints))
        state.break_log.append(ev)
        events.append({"type": "break", "event": ev})

    fc = state.forecaster
    fc.update_full(batch)
    state.last_batch = batch.batch_index
    full = fc.forecast_full(config.horizon)

    weight = config.w
    try:
        post = _post_forecast(state, config, events)
        if post is None:
            post, weight = full, 1.0
    except Exception as exc:  # noqa: BLE001 - degrade to the full-sample forecast
        events.append({"type": "error", "batch": batch.batch_index, "message": f"{type(exc).__name__}: {exc}"})
        post, weight = full, 1.0
    combined = combine(full, post, weight)

    state.pending.append(_issue(batch.batch_index, combined, full, post, weight))
    if hasattr(fc, "forget_before"):
        fc.forget_before(state.post_break_start)
    events.extend({"type": "completed", "forecast": item} for item in done)
    return combined, events


def _post_forecast(state, config, events):
    fc = state.forecaster
    start = state.post_break_start
    if start == 0:
        fc.fit_post(0)
        return fc.forecast_post(config.horizon)
    size = fc.post_sample_size(start) if hasattr(fc, "post_sample_size") else fc.n_observed - start
    if size >= fc.min_post_sample():
        fc.fit_post(start)
        return fc.forecast_post(config.horizon)
    if config.fallback == "full_only" or not hasattr(fc, "forecast_post_fallback"):
        events.append({"type": "fallback", "batch": state.last_batch, "kind": "full_only"})
        return None
    events.append({"type": "fallback", "batch": state.last_batch, "kind": config.fallback})
    return fc.forecast_post_fallback(config.fallback, start, config.horizon)


@dataclass
class ReplayReport:
    stream_id: str
    method: str
    hours_per_day: int
    issue_batches: np.ndarray
    combined: np.ndarray  # (issued forecasts, horizon)
    full: np.ndarray
    post: np.ndarray
    weights: np.ndarray
    actuals: np.ndarray  # NaN where the target lies beyond the stream
    detection_losses: list  # (batch, loss) pairs fed to the detector
    break_log: list
    checkpoint: bytes = b""
    errors: list = field(default_factory=list)
    origin_day: object = None

    @property
    def scored_days(self):
        H = self.hours_per_day
        return int(np.sum(np.all(np.isfinite(self.actuals[:, :H]), axis=1)))

    def one_day_losses(self, spec):
        """Per-batch summed losses of the one-day-ahead forecasts."""
        H = self.hours_per_day
        ok = np.all(np.isfinite(self.actuals[:, :H]), axis=1)
        vals = pointwise_loss(self.actuals[ok, :H], self.combined[ok, :H], spec).sum(axis=1)
        return self.issue_batches[ok] + 1, vals

    def realized_losses(self):
        return {spec.kind: self.one_day_losses(spec) for spec in ALL_LOSSES}


def _check_replay(stream, initial_batches, max_lag):
    H = stream.calendar.hours_per_day
    n_batches = len(stream) // H
    if initial_batches * H <= max_lag:
        raise InsufficientDataError(
            f"initial_batches * {H} must exceed max_lag={max_lag}; need initial_batches >= {max_lag // H + 1}")
    if n_batches < initial_batches + 1:
        raise InsufficientDataError(
            f"stream {stream.stream_id} has {n_batches} whole days; need at least {initial_batches + 1}")


def _collect(stream, method, state, items, H, horizon, detection_losses, errors, checkpoint):
    items = sorted(items, key=lambda it: it.issue_batch)
    mat = lambda attr: np.array([getattr(it, attr) for it in items]).reshape(len(items), horizon)
    return ReplayReport(
        stream_id=stream.stream_id,
        method=method,
        hours_per_day=H,
        issue_batches=np.array([it.issue_batch for it in items], dtype=np.int64),
        combined=mat("combined"),
        full=mat("full"),
        post=mat("post"),
        weights=np.array([it.weight for it in items]),
        actuals=mat("actuals"),
        detection_losses=detection_losses,
        break_log=list(state.break_log),
        checkpoint=checkpoint,
        errors=errors,
        origin_day=stream.origin_day,
    )


def run_stream(stream, spec, config, initial_batches, method=None, forecaster=None, seed=0, on_event=None):
    """Replay a stream day by day through the engine.

    Trains on the first ``initial_batches`` days, then steps through the
    rest, recording every issued forecast with its realised actuals.
    """
    H = stream.calendar.hours_per_day
    if forecaster is None:
        _check_replay(stream, initial_batches, spec.max_lag)
        forecaster = make_forecaster(spec, stream, config)
    else:
        _check_replay(stream, initial_batches, getattr(forecaster, "season_length", 1) - 1)
    batches = batch_iterator(stream)
    state, _ = init_state(forecaster, stream.values[:initial_batches * H], H, config, seed=seed)
    completed, detection_losses, errors = [], [], []
    for batch in batches[initial_batches:]:
        _, events = step(state, batch, config)
        for ev in events:
            if ev["type"] == "completed":
                completed.append(ev["forecast"])
            elif ev["type"] == "loss":
                detection_losses.append((ev["batch"], ev["value"]))
            elif ev["type"] == "error":
                errors.append(ev)
            if on_event is not None and ev["type"] != "completed":
                on_event(stream.stream_id, ev)
    completed.extend(state.pending)
    checkpoint = state.checkpoint(config.horizon) if hasattr(forecaster, "checkpoint") else b""
    return _collect(stream, method or config.mode, state, completed, H, config.horizon,
                    detection_losses, errors, checkpoint)


def run_full_sample(stream, spec, config, initial_batches):
    """Plain streaming forecaster: renew on each day, forecast, no breaks."""
    H = stream.calendar.hours_per_day
    _check_replay(stream, initial_batches, spec.max_lag)
    fc = make_forecaster(spec, stream, config)
    fc.initialize(stream.values[:initial_batches * H])
    out = [fc.forecast_full(config.horizon)]
    for batch in batch_iterator(stream)[initial_batches:]:
        fc.update_full(batch)
        out.append(fc.forecast_full(config.horizon))
    return np.array(out)


def run_naive(stream, horizon, initial_batches, season_length=None, method="naive"):
    """Replay the seasonal random walk on the same schedule as the engine."""
    season = season_length or stream.calendar.week_length
    cfg = EngineConfig(horizon=horizon, penalty=math.inf)
    return run_stream(stream, None, cfg, initial_batches, method=method, forecaster=NaiveForecaster(season))


def no_detection(config):
    """The same configuration with breakdown testing switched off."""
    items = dict(config.to_items())
    items["penalty"] = "inf"
    return EngineConfig.from_items([(k, str(v)) for k, v in items.items()])
