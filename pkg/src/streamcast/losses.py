"""Forecast losses: squared, symmetric absolute percentage and economic."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

KINDS = ("squared", "sape", "econ")


@dataclass(frozen=True)
class LossFunctionSpec:
    kind: str = "squared"
    c_under: float = 1.14
    c_over: float = 0.54

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown loss kind {self.kind!r}")
        if self.kind == "econ" and not (self.c_under > 0 and self.c_over > 0):
            raise ContractError("econ loss needs positive unit costs")

    @classmethod
    def parse(cls, text):
        return {"squared": SQUARED, "sape": SAPE, "econ": PLATFORM_ECON}.get(text) or cls(text)


SQUARED = LossFunctionSpec("squared")
SAPE = LossFunctionSpec("sape")
# unit costs of under-/over-forecasting used by the delivery platform
PLATFORM_ECON = LossFunctionSpec("econ", 1.14, 0.54)
ALL_LOSSES = (SQUARED, SAPE, PLATFORM_ECON)


def pointwise_loss(actual, forecast, spec):
    """Elementwise loss; works on scalars and arrays alike.

    ``sape(0, 0)`` is defined as 0 (a perfect forecast).
    """
    d = np.asarray(actual, dtype=np.float64)
    f = np.asarray(forecast, dtype=np.float64)
    if spec.kind == "squared":
        out = (d - f) ** 2
    elif spec.kind == "sape":
        denom = np.abs(d) + np.abs(f)
        with np.errstate(invalid="ignore", divide="ignore"):
            # ratio first so rounding keeps the value within [0, 100]
            out = np.where(denom > 0, 100.0 * (np.abs(d - f) / np.where(denom > 0, denom, 1.0)), 0.0)
    else:
        out = np.where(d > f, spec.c_under * (d - f), np.where(f > d, spec.c_over * (f - d), 0.0))
    return out if out.ndim else float(out)


def batch_loss(actuals, forecasts, spec):
    actuals = np.asarray(actuals, dtype=np.float64)
    forecasts = np.asarray(forecasts, dtype=np.float64)
    if actuals.shape != forecasts.shape or actuals.ndim != 1 or actuals.shape[0] < 1:
        raise ContractError("actuals and forecasts must be equal-length, non-empty vectors")
    return float(np.sum(pointwise_loss(actuals, forecasts, spec)))


@dataclass
class LossStream:
    """Per-batch aggregated losses starting at batch ``start_batch``."""

    values: list = field(default_factory=list)
    start_batch: int = 1

    def append(self, value):
        if not np.isfinite(value) or value < 0:
            raise ContractError(f"loss stream values must be finite and non-negative, got {value}")
        self.values.append(float(value))

    def truncate_after(self, position):
        """Drop the first ``position`` entries (the pre-break segment)."""
        self.values = self.values[position:]
        self.start_batch += position

    def __len__(self):
        return len(self.values)

    def as_array(self):
        return np.asarray(self.values, dtype=np.float64)


@dataclass
class LossTable:
    kind: str
    cells: np.ndarray  # (hour of day, days ahead)
    overall: float
    counts: np.ndarray

    def to_rows(self):
        H, D = self.cells.shape
        return [(h + 1, k + 1, self.kind, float(self.cells[h, k])) for h in range(H) for k in range(D)]


def evaluation_summary(actuals, forecasts, spec, hours_per_day):
    """Mean loss per (hour of day, days ahead) cell, plus the overall mean.

    ``actuals``/``forecasts`` are (issue day x horizon) matrices; NaN
    actuals mark forecasts that were never realised and are skipped.
    For the squared loss every mean is reported as its square root.
    """
    actuals = np.asarray(actuals, dtype=np.float64)
    forecasts = np.asarray(forecasts, dtype=np.float64)
    if actuals.shape != forecasts.shape:
        raise ContractError("actuals and forecasts must have the same shape")
    if actuals.size == 0:
        return LossTable(spec.kind, np.empty((0, 0)), float("nan"), np.empty((0, 0), dtype=np.int64))
    horizon = actuals.shape[1]
    days_ahead = -(-horizon // hours_per_day)
    ok = np.isfinite(actuals)
    losses = np.where(ok, pointwise_loss(np.where(ok, actuals, 0.0), forecasts, spec), 0.0)
    sums = np.zeros((hours_per_day, days_ahead))
    counts = np.zeros((hours_per_day, days_ahead), dtype=np.int64)
    for h in range(horizon):
        sums[h % hours_per_day, h // hours_per_day] += losses[:, h].sum()
        counts[h % hours_per_day, h // hours_per_day] += ok[:, h].sum()
    with np.errstate(invalid="ignore"):
        cells = sums / counts
        overall = losses.sum() / ok.sum() if ok.any() else float("nan")
    if spec.kind == "squared":
        cells = np.sqrt(cells)
        overall = float(np.sqrt(overall))
    return LossTable(spec.kind, cells, float(overall), counts)


def write_loss_tables(path, tables, seed=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if seed is not None:
            fh.write(f"# seed={seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour", "day_ahead", "loss_kind", "value"])
        for table in tables:
            for row in table.to_rows():
                w.writerow([row[0], row[1], row[2], repr(row[3])])
