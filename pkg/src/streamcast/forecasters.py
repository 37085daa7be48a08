"""Forecasters the engine can drive.

The engine only needs the small :class:`ForecasterContract`.  The default
:class:`RegressionForecaster` keeps the full-sample model as gram
statistics that absorb each day, and refits a post-break model on demand.
"""

import struct
from typing import Protocol, runtime_checkable

import numpy as np

from .design import TimeFrame, design_rows, forecast_from_tail, naive_from_tail
from .errors import ContractError, InsufficientDataError
from .estimation import (
    RenewableState,
    absorb,
    default_penalized,
    lasso_from_moments,
    select_lambda_from_moments,
)


@runtime_checkable
class ForecasterContract(Protocol):
    def update_full(self, batch) -> None:
        """Absorb a new batch into the full-sample model."""

    def fit_post(self, start) -> None:
        """Fit the post-break model on observations from ``start`` onward."""

    def forecast_full(self, horizon) -> np.ndarray: ...

    def forecast_post(self, horizon) -> np.ndarray: ...

    def min_post_sample(self) -> int: ...


class _ValueBuffer:
    """Append-only window of raw observations with a movable left edge."""

    def __init__(self):
        self._data = np.empty(1024)
        self.offset = 0  # global index of _data[0]
        self.end = 0  # global index one past the last observation

    def append(self, values):
        values = np.asarray(values, dtype=np.float64)
        used = self.end - self.offset
        if used + values.shape[0] > self._data.shape[0]:
            grown = np.empty(max(2 * self._data.shape[0], used + values.shape[0]))
            grown[:used] = self._data[:used]
            self._data = grown
        self._data[used:used + values.shape[0]] = values
        self.end += values.shape[0]

    def forget_before(self, index):
        index = min(index, self.end)
        drop = index - self.offset
        if drop <= 0:
            return
        used = self.end - self.offset
        self._data[:used - drop] = self._data[drop:used]
        self.offset = index
        if self._data.shape[0] > 4096 and used - drop < self._data.shape[0] // 4:
            self._data = self._data[:max(1024, 2 * (used - drop))].copy()

    @property
    def values(self):
        return self._data[:self.end - self.offset]

    def tail(self, n):
        v = self.values
        if v.shape[0] < n:
            raise InsufficientDataError(f"only {v.shape[0]} observations retained, need {n}")
        return v[v.shape[0] - n:]


class RegressionForecaster:
    """Seasonal/trend/lag regression for one stream.

    ``mode="domain"`` estimates by OLS and renews the full-sample fit with
    each batch; ``mode="data"`` refits a lasso on the accumulated gram
    statistics every batch and re-selects the penalty by BIC every
    ``lambda_refresh`` batches.
    """

    def __init__(self, spec, frame, mode="domain", lambda_refresh=7, clip=False):
        if mode not in ("domain", "data"):
            raise ContractError(f"unknown mode {mode!r}")
        spec.validate(frame.calendar)
        self.spec = spec
        self.frame = frame
        self.mode = mode
        self.lambda_refresh = int(lambda_refresh)
        self.clip = clip
        self.labels = spec.column_labels(frame.calendar)
        self.penalized = default_penalized(self.labels)
        self._buf = _ValueBuffer()
        self._full = RenewableState.empty(self.labels)
        self._full_lambda = None
        self._since_select = 0
        self._post = None  # None while the post-break sample is the full sample
        self._post_start = 0
        self._post_lambda = None
        self._post_since_select = 0
        self._keep = max(spec.max_lag, frame.calendar.week_length)

    # -- data handling -------------------------------------------------
    @property
    def n_observed(self):
        return self._buf.end

    def _rows(self, start, stop, spec=None):
        spec = spec or self.spec
        start = max(start, spec.max_lag)
        t = np.arange(start, stop)
        return design_rows(self._buf.values, self._buf.offset, t, self.frame, spec)

    def _refit(self, state, lam, since, beta0):
        """Coefficients for a state under the configured estimator."""
        if self.mode == "domain":
            return state.coefficients, lam, since
        n = state.observation_count
        if lam is None or since >= self.lambda_refresh:
            if n >= 10:
                lam, fit = select_lambda_from_moments(state.gram, state.moment, state.target_ss, n,
                                                      self.penalized, self.labels)
                return fit.coefficients, lam, 0
            lam = 0.0
        fit = lasso_from_moments(state.gram, state.moment, n, lam, self.penalized, beta0, self.labels)
        return fit.coefficients, lam, since

    def initialize(self, values):
        """Absorb the initial training data (the first batches)."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape[0] <= self.spec.max_lag:
            raise InsufficientDataError(f"initial sample must exceed {self.spec.max_lag} observations")
        self._buf.append(values)
        X, y = self._rows(0, self._buf.end)
        state = absorb(self._full, X, y)
        beta, self._full_lambda, self._since_select = self._refit(state, None, 0, None)
        state.coefficients = beta
        self._full = state
        self._post = None
        self._post_start = 0

    def update_full(self, batch):
        obs = batch.observations if hasattr(batch, "observations") else batch
        start = self._buf.end
        self._buf.append(obs)
        X, y = self._rows(start, self._buf.end)
        state = absorb(self._full, X, y)
        self._since_select += 1
        beta, self._full_lambda, self._since_select = self._refit(
            state, self._full_lambda, self._since_select, self._full.coefficients)
        state.coefficients = beta
        self._full = state

    def fit_post(self, start):
        start = int(start)
        if start <= self.spec.max_lag:
            # no usable pre-sample to drop: the post-break model is the full one
            self._post = None
            self._post_start = start
            return
        if self._post is not None and start == self._post_start:
            done = self._post_end
            if done < self._buf.end:
                X, y = self._rows(done, self._buf.end)
                state = absorb(self._post, X, y)
                self._post_since_select += 1
                beta, self._post_lambda, self._post_since_select = self._refit(
                    state, self._post_lambda, self._post_since_select, self._post.coefficients)
                state.coefficients = beta
                self._post = state
        else:
            if start - self.spec.max_lag < self._buf.offset:
                raise InsufficientDataError("post-break start precedes retained history")
            X, y = self._rows(start, self._buf.end)
            state = absorb(RenewableState.empty(self.labels), X, y)
            beta, self._post_lambda, self._post_since_select = self._refit(state, None, 0, None)
            state.coefficients = beta
            self._post = state
            self._post_start = start
        self._post_end = self._buf.end

    def post_sample_size(self, start):
        return self._buf.end - max(int(start), self.spec.max_lag)

    def min_post_sample(self):
        return self.spec.max_lag + len(self.labels)

    def forget_before(self, start):
        """Raw data before ``start`` minus the lag window is never needed again."""
        self._buf.forget_before(max(0, int(start) - self._keep, 0))

    # -- forecasting ---------------------------------------------------
    def _forecast(self, coefficients, horizon, spec=None):
        spec = spec or self.spec
        return forecast_from_tail(coefficients, spec, self.frame, self._buf.values, self._buf.end, horizon, self.clip)

    def forecast_full(self, horizon):
        return self._forecast(self._full.coefficients, horizon)

    def forecast_post(self, horizon):
        if self._post is None:
            return self.forecast_full(horizon)
        return self._forecast(self._post.coefficients, horizon)

    @property
    def post_shares_full(self):
        return self._post is None

    def forecast_post_fallback(self, kind, start, horizon):
        """Post-break forecasts while the sample is too short for the model."""
        if kind == "naive":
            out = naive_from_tail(self._buf.values, horizon, self.frame.calendar.week_length)
            return np.maximum(out, 0.0) if self.clip else out
        if kind == "lag1_lasso":
            spec = self.spec.with_lags_at_most(1)
            X, y = self._rows(start, self._buf.end, spec)
            if X.shape[0] < 10:
                raise InsufficientDataError("too few post-break rows for the lag-1 lasso")
            labels = spec.column_labels(self.frame.calendar)
            _, fit = select_lambda_from_moments(X.T @ X, X.T @ y, float(y @ y), X.shape[0],
                                                default_penalized(labels), labels)
            return self._forecast(fit.coefficients, horizon, spec)
        raise ContractError(f"unknown fallback {kind!r}")

    # -- persistence ---------------------------------------------------
    def checkpoint(self):
        """Model state: full and post gram states plus the lag window."""
        post = self._full if self._post is None else self._post
        tail = np.zeros(self._keep)
        avail = self._buf.values[-self._keep:]
        tail[self._keep - avail.shape[0]:] = avail
        return b"".join([
            struct.pack("<QQ", self._buf.end, self._post_start),
            _framed(self._full.to_bytes()),
            _framed(post.to_bytes()),
            tail.astype("<f8").tobytes(),
        ])

    @property
    def full_state(self):
        return self._full

    @property
    def post_state(self):
        return self._full if self._post is None else self._post


def _framed(raw):
    return struct.pack("<Q", len(raw)) + raw


class NaiveForecaster:
    """Seasonal random walk; no estimation, identical full and post forecasts."""

    def __init__(self, season_length):
        self.season_length = int(season_length)
        self._buf = _ValueBuffer()

    def initialize(self, values):
        self._buf.append(values)

    def update_full(self, batch):
        self._buf.append(batch.observations if hasattr(batch, "observations") else batch)
        self._buf.forget_before(self._buf.end - self.season_length)

    def fit_post(self, start):
        pass

    def forecast_full(self, horizon):
        return naive_from_tail(self._buf.values, horizon, self.season_length)

    forecast_post = forecast_full

    def min_post_sample(self):
        return 0

    @property
    def n_observed(self):
        return self._buf.end


def make_forecaster(spec, stream_or_frame, config):
    frame = stream_or_frame if isinstance(stream_or_frame, TimeFrame) else TimeFrame.of(stream_or_frame)
    return RegressionForecaster(spec, frame, mode=config.mode, lambda_refresh=config.lambda_refresh,
                                clip=config.clip_negative)
