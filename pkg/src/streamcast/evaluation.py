"""Cross-method comparison over a stream collection.

Forecasts of every method are held as (stream, issue day, horizon)
tensors aligned on the same issue days, so methods can be compared point
by point.
"""

import csv
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataError
from .losses import pointwise_loss


class UndefinedRatioError(DataError):
    """The reference method has zero loss, so relative scores are undefined."""


@dataclass
class MethodRun:
    name: str
    stream_ids: list
    forecasts: np.ndarray  # (streams, issue days, horizon)
    actuals: np.ndarray  # NaN where never realised
    issue_batches: np.ndarray  # 1-based batch index on which each forecast was issued
    hours_per_day: int
    seconds: float = float("nan")
    break_logs: dict = field(default_factory=dict)

    def __post_init__(self):
        self.forecasts = np.asarray(self.forecasts, dtype=np.float64)
        self.actuals = np.asarray(self.actuals, dtype=np.float64)
        self.issue_batches = np.asarray(self.issue_batches, dtype=np.int64)
        if self.forecasts.shape != self.actuals.shape or self.forecasts.ndim != 3:
            raise ContractError("forecasts and actuals must be equal (stream, day, horizon) tensors")
        if self.forecasts.shape[:2] != (len(self.stream_ids), self.issue_batches.shape[0]):
            raise ContractError("tensor shape does not match stream ids / issue days")

    @classmethod
    def from_reports(cls, name, reports, seconds=float("nan")):
        if not reports:
            raise ContractError("no reports to collect")
        issue = reports[0].issue_batches
        for r in reports:
            if not np.array_equal(r.issue_batches, issue) or r.combined.shape != reports[0].combined.shape:
                raise ContractError(f"report for {r.stream_id} is not aligned with the others")
        return cls(
            name,
            [r.stream_id for r in reports],
            np.stack([r.combined for r in reports]),
            np.stack([r.actuals for r in reports]),
            issue,
            reports[0].hours_per_day,
            seconds,
            {r.stream_id: list(r.break_log) for r in reports},
        )

    @property
    def horizon(self):
        return self.forecasts.shape[2]

    def target_batches(self):
        """(issue days, horizon) matrix of the batch each target falls in."""
        k = np.arange(self.horizon) // self.hours_per_day
        return self.issue_batches[:, None] + 1 + k[None, :]


def _check_aligned(a, b):
    if a.forecasts.shape != b.forecasts.shape or not np.array_equal(a.issue_batches, b.issue_batches):
        raise ContractError(f"runs {a.name!r} and {b.name!r} are not aligned")
    if list(a.stream_ids) != list(b.stream_ids) or a.hours_per_day != b.hours_per_day:
        raise ContractError(f"runs {a.name!r} and {b.name!r} cover different streams")
    if not np.array_equal(np.isnan(a.actuals), np.isnan(b.actuals)):
        raise ContractError(f"runs {a.name!r} and {b.name!r} were scored on different points")


def _mask(run, period, split_batch, max_days_ahead):
    target = run.target_batches()
    m = np.ones(target.shape, dtype=bool)
    if max_days_ahead is not None:
        m[:, max_days_ahead * run.hours_per_day:] = False
    if period == "pre":
        m &= target < split_batch
    elif period == "post":
        m &= target >= split_batch
    return m


def stream_losses(run, spec, mask):
    """Mean loss per stream over the masked points (root mean for squared)."""
    ok = np.isfinite(run.actuals) & mask[None, :, :]
    loss = np.where(ok, pointwise_loss(np.where(ok, run.actuals, 0.0), run.forecasts, spec), 0.0)
    counts = ok.sum(axis=(1, 2))
    if np.any(counts == 0):
        raise DataError("a stream has no scored points in this period")
    means = loss.sum(axis=(1, 2)) / counts
    return np.sqrt(means) if spec.kind == "squared" else means


def compare(reference, others, losses, period_split=None, max_days_ahead=None):
    """Relative performance table, reference method = 100.

    Each method's per-stream mean loss is divided by the reference's and
    the ratios are averaged over streams with equal weights.  With
    ``period_split`` (the first batch of the later period) the table also
    has ``pre`` and ``post`` rows, split by target date.
    """
    periods = ["all"] if period_split is None else ["all", "pre", "post"]
    rows = []
    for spec in losses:
        for period in periods:
            mask = _mask(reference, period, period_split, max_days_ahead)
            ref = stream_losses(reference, spec, mask)
            if np.any(ref == 0):
                raise UndefinedRatioError(f"reference {reference.name!r} has zero {spec.kind} loss on a stream")
            rows.append((reference.name, period, spec.kind, 100.0))
            for run in others:
                _check_aligned(reference, run)
                rel = 100.0 * stream_losses(run, spec, mask) / ref
                rows.append((run.name, period, spec.kind, float(np.mean(rel))))
    return rows


def economic_gain(reference, other, econ, window):
    """Annualised money saved by ``reference`` relative to ``other``.

    Sums ``econ(other) - econ(reference)`` of one-day-ahead forecasts over
    target batches ``window = (first, last)`` (inclusive) and all streams,
    then scales by ``365 / days in window``.
    """
    _check_aligned(reference, other)
    first, last = window
    if last < first:
        raise ContractError("empty evaluation window")
    H = reference.hours_per_day
    target = reference.issue_batches + 1
    rows = (target >= first) & (target <= last)
    if not rows.any():
        raise ContractError("evaluation window contains no forecasts")
    d = reference.actuals[:, rows, :H]
    ok = np.isfinite(d)
    d0 = np.where(ok, d, 0.0)
    diff = pointwise_loss(d0, other.forecasts[:, rows, :H], econ) - pointwise_loss(d0, reference.forecasts[:, rows, :H], econ)
    total = float(np.sum(np.where(ok, diff, 0.0)))
    return total * 365.0 / (last - first + 1)


@dataclass
class Timing:
    median: float
    samples: list

    @property
    def spread(self):
        return max(self.samples) - min(self.samples)


def timing_harness(runner, streams, repeats=3):
    """Median wall-clock seconds of ``runner(streams)`` over ``repeats`` runs."""
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        runner(streams)
        samples.append(time.perf_counter() - t0)
    return Timing(statistics.median(samples), samples)


def daily_update(forecasters, batches, horizon):
    """One sequential daily step for a whole collection: absorb the new
    batch, then forecast ``horizon`` hours ahead."""
    out = []
    for fc, batch in zip(forecasters, batches):
        fc.update_full(batch)
        out.append(fc.forecast_full(horizon))
    return out


def _writer(fh, seed):
    if seed is not None:
        fh.write(f"# seed={seed}\n")
    return csv.writer(fh, lineterminator="\n")


def write_comparison(path, rows, seed=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh, seed)
        w.writerow(["method", "period", "loss_kind", "relative"])
        for method, period, kind, value in rows:
            w.writerow([method, period, kind, f"{value:.6f}"])


def heatmap(run, spec, period=None, split_batch=None):
    """(hour of day, days ahead) grid of loss averaged over streams."""
    H = run.hours_per_day
    days = -(-run.horizon // H)
    mask = _mask(run, period or "all", split_batch, None)
    grid = np.full((H, days), np.nan)
    for k in range(run.horizon):
        ok = np.isfinite(run.actuals[:, :, k]) & mask[None, :, k]
        per = []
        for s in range(len(run.stream_ids)):
            if ok[s].any():
                v = pointwise_loss(run.actuals[s, ok[s], k], run.forecasts[s, ok[s], k], spec).mean()
                per.append(np.sqrt(v) if spec.kind == "squared" else v)
        if per:
            grid[k % H, k // H] = float(np.mean(per))
    return grid


def write_heatmap(path, grid, method, seed=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh, seed)
        w.writerow(["method", "hour", "day_ahead", "value"])
        for h in range(grid.shape[0]):
            for d in range(grid.shape[1]):
                w.writerow([method, h + 1, d + 1, repr(float(grid[h, d]))])


def write_breaks(path, break_logs, seed=None):
    """``break_logs`` maps stream id to its list of break events."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh, seed)
        w.writerow(["stream_id", "detection_batch", "break_batch", "post_break_start"])
        for sid in sorted(break_logs):
            for ev in break_logs[sid]:
                w.writerow([sid, ev.detection_batch, ev.break_batch, ev.post_break_start])


def write_gains(path, gains, seed=None):
    """``gains`` is a list of (reference, other, window_first, window_last, value)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh, seed)
        w.writerow(["reference", "other", "first_batch", "last_batch", "annual_gain"])
        for ref, other, a, b, v in gains:
            w.writerow([ref, other, a, b, f"{v:.6f}"])
