"""Least squares from summary statistics, batch-renewable, plus the lasso.

Everything here works on the gram matrix ``X'X`` and moment vector
``X'y`` so a model can absorb new batches without keeping raw history.
"""

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import kernels
from .errors import ContractError, DataError, InsufficientDataError

JITTER = 1e-8
LASSO_TOL = 1e-7
LASSO_MAX_SWEEPS = 10_000
_DETERMINISTIC_PREFIXES = ("trend_", "day_", "hour_", "month_", "holiday_")


@dataclass
class RenewableState:
    """Accumulated ``X'X``, ``X'y`` and ``y'y`` with the current OLS fit.

    ``moment`` equals ``gram @ coefficients`` whenever the gram is
    non-singular; it is carried separately so the ridge jitter used for
    singular grams never feeds back into later updates.
    """

    gram: np.ndarray
    moment: np.ndarray
    coefficients: np.ndarray
    observation_count: int
    column_labels: list
    target_ss: float = 0.0

    @classmethod
    def empty(cls, column_labels):
        p = len(column_labels)
        return cls(np.zeros((p, p)), np.zeros(p), np.zeros(p), 0, list(column_labels))

    @property
    def n_params(self):
        return len(self.column_labels)

    def to_bytes(self):
        p = self.n_params
        parts = [struct.pack("<Q", p)]
        for lab in self.column_labels:
            raw = lab.encode("utf-8")
            parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(np.ascontiguousarray(self.gram, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(self.moment, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(self.coefficients, dtype="<f8").tobytes())
        parts.append(struct.pack("<dd", float(self.observation_count), float(self.target_ss)))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data):
        (p,) = struct.unpack_from("<Q", data, 0)
        pos = 8
        labels = []
        for _ in range(p):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            labels.append(data[pos:pos + n].decode("utf-8"))
            pos += n
        gram = np.frombuffer(data, dtype="<f8", count=p * p, offset=pos).reshape(p, p).astype(np.float64)
        pos += 8 * p * p
        moment = np.frombuffer(data, dtype="<f8", count=p, offset=pos).astype(np.float64)
        pos += 8 * p
        coefs = np.frombuffer(data, dtype="<f8", count=p, offset=pos).astype(np.float64)
        pos += 8 * p
        count, yy = struct.unpack_from("<dd", data, pos)
        return cls(gram, moment, coefs, int(count), labels, yy)


def _check_finite(X, y):
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataError("design contains non-finite values")


def solve_normal_equations(gram, moment):
    """Solve ``gram @ b = moment`` by Cholesky.

    If the gram is singular or numerically so, ``1e-8 * trace / p`` is
    added to its diagonal first.
    """
    p = gram.shape[0]
    if p == 0:
        return np.zeros(0)
    d = np.diag(gram)
    if np.all(d > 0):
        s = 1.0 / np.sqrt(d)
        scaled = gram * s[:, None] * s[None, :]
        try:
            c = cho_factor(scaled, lower=True, check_finite=False)
            if np.min(np.abs(np.diag(c[0]))) ** 2 > 1e-10:
                return s * cho_solve(c, s * moment, check_finite=False)
        except LinAlgError:
            pass
    tr = float(np.trace(gram))
    jitter = JITTER * tr / p if tr > 0 else JITTER
    c = cho_factor(gram + jitter * np.eye(p), lower=True, check_finite=False)
    return cho_solve(c, moment, check_finite=False)


def fit_ols(design):
    X, y = design.predictors, design.targets
    if X.shape[0] < 1:
        raise InsufficientDataError("OLS needs at least one row")
    _check_finite(X, y)
    gram = X.T @ X
    moment = X.T @ y
    return RenewableState(
        gram, moment, solve_normal_equations(gram, moment), X.shape[0], list(design.column_labels), float(y @ y)
    )


def absorb(state, X, y):
    """Add rows to a state; the workhorse behind :func:`renew`."""
    if X.shape[0] == 0:
        return state
    _check_finite(X, y)
    gram = state.gram + X.T @ X
    moment = state.moment + X.T @ y
    return RenewableState(
        gram,
        moment,
        solve_normal_equations(gram, moment),
        state.observation_count + X.shape[0],
        state.column_labels,
        state.target_ss + float(y @ y),
    )


def renew(state, new_design):
    """Absorb a new batch: ``(J + Xb'Xb)^-1 (J beta + Xb'yb)``."""
    if list(new_design.column_labels) != list(state.column_labels):
        raise ContractError("column labels of state and batch differ")
    return absorb(state, new_design.predictors, new_design.targets)


def renew_with_batch_estimate(state, new_design):
    """Literal form of the renewable update, going through the batch OLS
    estimate ``beta_b``; kept as a cross-check of :func:`renew`."""
    if list(new_design.column_labels) != list(state.column_labels):
        raise ContractError("column labels of state and batch differ")
    X, y = new_design.predictors, new_design.targets
    if X.shape[0] == 0:
        return state
    xtx = X.T @ X
    beta_b = solve_normal_equations(xtx, X.T @ y)
    gram = state.gram + xtx
    rhs = state.gram @ state.coefficients + xtx @ beta_b
    return RenewableState(
        gram,
        state.moment + X.T @ y,
        solve_normal_equations(gram, rhs),
        state.observation_count + X.shape[0],
        state.column_labels,
        state.target_ss + float(y @ y),
    )


@dataclass
class LassoFit:
    coefficients: np.ndarray
    lam: float
    active_set: np.ndarray
    iterations: int
    converged: bool = True
    column_labels: list = field(default_factory=list)


def default_penalized(column_labels):
    """Deterministic columns (trend and dummies) stay unpenalised."""
    return np.array([not lab.startswith(_DETERMINISTIC_PREFIXES) for lab in column_labels], dtype=bool)


class _Standardized:
    """Gram statistics rescaled so each column has unit mean square."""

    def __init__(self, gram, moment, n, penalized):
        self.n = n
        d = np.diag(gram) / n
        self.scale = np.sqrt(np.maximum(d, 0.0))
        live = self.scale > 0
        inv = np.where(live, 1.0 / np.where(live, self.scale, 1.0), 0.0)
        self.G = gram * inv[:, None] * inv[None, :] / n
        self.c = moment * inv / n
        self.live = live
        self.pen_mask = np.asarray(penalized, dtype=bool) & live
        self.free = ~np.asarray(penalized, dtype=bool) & live

    def free_fit(self, b):
        """Optimal unpenalised block given the penalised coefficients in ``b``."""
        b = b.copy()
        f = self.free
        if f.any():
            rhs = self.c[f] - self.G[np.ix_(f, ~f)] @ b[~f]
            b[f] = solve_normal_equations(self.G[np.ix_(f, f)], rhs)
        return b

    def lambda_max(self):
        if not self.pen_mask.any():
            return 0.0
        b = self.free_fit(np.zeros_like(self.c))
        grad = self.c - self.G @ b
        return float(np.max(np.abs(grad[self.pen_mask])))

    def solve(self, lam, b0=None, tol=LASSO_TOL, max_iter=LASSO_MAX_SWEEPS):
        b = self.free_fit(np.zeros_like(self.c)) if b0 is None else np.array(b0, dtype=np.float64)
        pen = np.where(self.pen_mask, lam, 0.0)
        return kernels.lasso_cd(self.G, self.c, b, pen, tol, max_iter)

    def unscale(self, b):
        return np.where(self.live, b / np.where(self.live, self.scale, 1.0), 0.0)

    def rescale(self, beta):
        return beta * self.scale


def _make_fit(std, b, lam, sweeps, converged, labels):
    beta = std.unscale(b)
    return LassoFit(beta, float(lam), np.flatnonzero(beta != 0.0), int(sweeps), bool(converged), list(labels))


def lasso_from_moments(gram, moment, n, lam, penalized, beta0=None, column_labels=(),
                       tol=LASSO_TOL, max_iter=LASSO_MAX_SWEEPS):
    """Lasso fit from gram statistics; ``beta0`` (original scale) warm-starts."""
    if lam < 0:
        raise ContractError("lambda must be non-negative")
    if n < 1:
        raise InsufficientDataError("lasso needs at least one row")
    std = _Standardized(gram, moment, n, penalized)
    b0 = None if beta0 is None else std.rescale(np.asarray(beta0, dtype=np.float64))
    b, sweeps, conv = std.solve(lam, b0, tol, max_iter)
    return _make_fit(std, b, lam, sweeps, conv, column_labels)


def fit_lasso(design, lam, penalized=None, beta0=None, tol=LASSO_TOL, max_iter=LASSO_MAX_SWEEPS):
    """Minimise ``(1/2n)||y - Xb||^2 + lam * sum|b_j|`` over penalised columns.

    Columns are scaled internally to unit mean square (no centring: the
    models here carry no intercept); coefficients are returned on the
    original scale.
    """
    X, y = design.predictors, design.targets
    _check_finite(X, y)
    if penalized is None:
        penalized = default_penalized(design.column_labels)
    return lasso_from_moments(X.T @ X, X.T @ y, X.shape[0], lam, penalized, beta0,
                              design.column_labels, tol, max_iter)


def lambda_max(design, penalized=None):
    X, y = design.predictors, design.targets
    if penalized is None:
        penalized = default_penalized(design.column_labels)
    return _Standardized(X.T @ X, X.T @ y, X.shape[0], penalized).lambda_max()


def lambda_grid(lam_max, n_points=50, ratio=1e-3):
    if lam_max <= 0:
        return np.zeros(1)
    return lam_max * np.geomspace(1.0, ratio, n_points)


def bic(rss, n, n_active):
    return n * np.log(max(rss, 1e-300) / n) + np.log(n) * n_active


def rss_from_moments(beta, gram, moment, yy):
    return max(float(yy - 2.0 * beta @ moment + beta @ gram @ beta), 0.0)


def select_lambda_from_moments(gram, moment, yy, n, penalized, column_labels=()):
    """BIC-best lasso over a 50-point geometric grid; returns (lam, fit)."""
    if n < 10:
        raise InsufficientDataError("lambda selection needs at least 10 rows")
    std = _Standardized(gram, moment, n, penalized)
    best = None
    b = None
    for lam in lambda_grid(std.lambda_max()):
        b, sweeps, conv = std.solve(lam, b)
        fit = _make_fit(std, b.copy(), lam, sweeps, conv, column_labels)
        score = bic(rss_from_moments(fit.coefficients, gram, moment, yy), n, fit.active_set.shape[0])
        if best is None or score < best[0]:
            best = (score, fit)
    return best[1].lam, best[1]


def select_lambda(design, penalized=None):
    X, y = design.predictors, design.targets
    if X.shape[0] < 10:
        raise InsufficientDataError("lambda selection needs at least 10 rows")
    _check_finite(X, y)
    if penalized is None:
        penalized = default_penalized(design.column_labels)
    lam, _ = select_lambda_from_moments(X.T @ X, X.T @ y, float(y @ y), X.shape[0], penalized, design.column_labels)
    return lam
