"""Penalised change-point detection in mean and variance of a series.

The segment cost is twice the negative maximised Gaussian log-likelihood,
with the variance constrained to be at least ``variance_floor`` so that
constant segments (e.g. runs of perfect forecasts) stay finite.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractError

VARIANCE_FLOOR = 1e-8
MIN_SEGLEN = 2
EXHAUSTIVE_MAX_LEN = 2000
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class DetectionResult:
    """Breakpoints are 1-based positions of the last point of each segment
    but the final one; ``tested`` is False when the series was too short."""

    breakpoints: list
    total_cost: float
    method: str
    tested: bool = True
    penalty: float = 0.0

    @property
    def found(self):
        return bool(self.breakpoints)


def segment_cost(values, variance_floor=VARIANCE_FLOOR):
    """Cost of one segment under a normal model with its own mean and
    variance: ``n (log 2pi + log var + 1)`` with the biased variance.

    When the variance is below the floor the likelihood is maximised at
    the floor instead, giving ``n (log 2pi + log floor) + n var / floor``.
    """
    x = np.asarray(values, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise ContractError("segment cost needs at least two points")
    var = float(np.mean((x - x.mean()) ** 2))
    if var >= variance_floor:
        return n * (LOG_2PI + math.log(var) + 1.0)
    return n * (LOG_2PI + math.log(variance_floor)) + n * var / variance_floor


def default_penalty(n):
    """Three parameters (mean, variance, location) per extra change-point."""
    return 3.0 * math.log(n)


def _prepare(values, penalty, min_seglen):
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1:
        raise ContractError("expected a one-dimensional series")
    if not np.all(np.isfinite(x)):
        raise ContractError("series contains non-finite values")
    if min_seglen < 1:
        raise ContractError("min_seglen must be at least 1")
    if penalty is None:
        penalty = default_penalty(max(x.shape[0], 2))
    if penalty < 0:
        raise ContractError("penalty must be non-negative")
    return x, float(penalty)


def _total_cost(x, breakpoints, penalty, variance_floor):
    # re-summed segment by segment: prefix sums lose ~1e-6 on floored segments
    edges = [0, *breakpoints, x.shape[0]]
    cost = sum(_seg_cost_any(x[a:b], variance_floor) for a, b in zip(edges[:-1], edges[1:]))
    return cost + penalty * len(breakpoints)


def _seg_cost_any(x, variance_floor):
    # single points are allowed when min_seglen == 1
    if x.shape[0] == 1:
        return LOG_2PI + math.log(variance_floor)
    return segment_cost(x, variance_floor)


def _untested(x, method, penalty):
    return DetectionResult([], float("nan"), method, tested=False, penalty=penalty)


def _single(x, method, penalty, variance_floor):
    return DetectionResult([], _total_cost(x, [], 0.0, variance_floor), method, penalty=penalty)


def detect_pelt(values, penalty=None, min_seglen=MIN_SEGLEN, variance_floor=VARIANCE_FLOOR):
    """Exact penalised segmentation via PELT.

    Minimises the sum of segment costs plus ``penalty`` per change-point.
    Ties go to fewer change-points, then to the earlier last change-point.
    """
    x, penalty = _prepare(values, penalty, min_seglen)
    if x.shape[0] < 2 * min_seglen:
        return _untested(x, "pelt", penalty)
    if math.isinf(penalty):
        return _single(x, "pelt", penalty, variance_floor)
    bps, _ = kernels.pelt_meanvar(x, penalty, min_seglen, variance_floor, prune=True)
    return DetectionResult(bps, _total_cost(x, bps, penalty, variance_floor), "pelt", penalty=penalty)


def detect_exhaustive(values, penalty=None, min_seglen=MIN_SEGLEN, variance_floor=VARIANCE_FLOOR):
    """Optimal partitioning without pruning (quadratic; for cross-checks)."""
    x, penalty = _prepare(values, penalty, min_seglen)
    if x.shape[0] > EXHAUSTIVE_MAX_LEN:
        raise ContractError(f"exhaustive search limited to {EXHAUSTIVE_MAX_LEN} points")
    if x.shape[0] < 2 * min_seglen:
        return _untested(x, "exhaustive", penalty)
    if math.isinf(penalty):
        return _single(x, "exhaustive", penalty, variance_floor)
    bps, _ = kernels.pelt_meanvar(x, penalty, min_seglen, variance_floor, prune=False)
    return DetectionResult(bps, _total_cost(x, bps, penalty, variance_floor), "exhaustive", penalty=penalty)


class _PrefixCost:
    def __init__(self, x, variance_floor):
        xc = x - x.mean()
        self.s1 = np.concatenate(([0.0], np.cumsum(xc)))
        self.s2 = np.concatenate(([0.0], np.cumsum(xc * xc)))
        self.floor = variance_floor

    def __call__(self, a, b):
        n = b - a
        s1 = self.s1[b] - self.s1[a]
        s2 = self.s2[b] - self.s2[a]
        mean = s1 / n
        var = max(s2 / n - mean * mean, 0.0)
        if var >= self.floor:
            return n * (LOG_2PI + math.log(var) + 1.0)
        return n * (LOG_2PI + math.log(self.floor)) + n * var / self.floor

    def best_split(self, a, b, min_seglen):
        """Best single split of [a, b): returns (gain, position) or None."""
        if b - a < 2 * min_seglen:
            return None
        whole = self(a, b)
        best = None
        for k in range(a + min_seglen, b - min_seglen + 1):
            gain = whole - self(a, k) - self(k, b)
            if best is None or gain > best[0]:
                best = (gain, k)
        return best


def detect_binseg(values, penalty=None, min_seglen=MIN_SEGLEN, variance_floor=VARIANCE_FLOOR):
    """Binary segmentation: keep taking the best split anywhere while its
    cost reduction exceeds the penalty."""
    x, penalty = _prepare(values, penalty, min_seglen)
    if x.shape[0] < 2 * min_seglen:
        return _untested(x, "binseg", penalty)
    cost = _PrefixCost(x, variance_floor)
    segments = [(0, x.shape[0])]
    bps = []
    while True:
        best = None
        for a, b in segments:
            cand = cost.best_split(a, b, min_seglen)
            if cand is not None and cand[0] > penalty and (best is None or cand[0] > best[0]):
                best = (cand[0], cand[1], (a, b))
        if best is None:
            break
        _, k, (a, b) = best
        segments.remove((a, b))
        segments += [(a, k), (k, b)]
        bps.append(k)
    bps.sort()
    return DetectionResult(bps, _total_cost(x, bps, penalty, variance_floor), "binseg", penalty=penalty)


def detect_amoc(values, penalty=None, min_seglen=MIN_SEGLEN, variance_floor=VARIANCE_FLOOR):
    """At most one change: the best split if it beats the penalty."""
    x, penalty = _prepare(values, penalty, min_seglen)
    if x.shape[0] < 2 * min_seglen:
        return _untested(x, "amoc", penalty)
    best = _PrefixCost(x, variance_floor).best_split(0, x.shape[0], min_seglen)
    bps = [best[1]] if best is not None and best[0] > penalty else []
    return DetectionResult(bps, _total_cost(x, bps, penalty, variance_floor), "amoc", penalty=penalty)


DETECTORS = {
    "pelt": detect_pelt,
    "binseg": detect_binseg,
    "amoc": detect_amoc,
    "exhaustive": detect_exhaustive,
}


def get_detector(name):
    try:
        return DETECTORS[name]
    except KeyError:
        raise ContractError(f"unknown detector {name!r}; choose from {sorted(DETECTORS)}") from None
