"""Pure-Python/numpy implementations of the hot loops.

These mirror ``_ckernels.pyx`` line for line and are used whenever the
compiled extension is unavailable (or ``STREAMCAST_PURE_PYTHON=1``).
"""

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


def _meanvar_cost(s1, s2, n, var_floor):
    # s1, s2 are segment sums of x and x**2; n the segment lengths.
    mean = s1 / n
    var = s2 / n - mean * mean
    var = np.maximum(var, 0.0)
    return np.where(
        var >= var_floor,
        n * (LOG_2PI + np.log(np.maximum(var, var_floor)) + 1.0),
        n * (LOG_2PI + math.log(var_floor)) + n * var / var_floor,
    )


def pelt_meanvar(x, penalty, min_seglen, var_floor, prune=True):
    """Penalised normal mean/variance segmentation by dynamic programming.

    Returns ``(breakpoints, total_cost)`` where each breakpoint is the
    number of points in the series up to and including the last point of
    a segment.  ``prune=False`` gives plain optimal partitioning.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    ms = int(min_seglen)
    xc = x - x.mean()
    cs1 = np.concatenate(([0.0], np.cumsum(xc)))
    cs2 = np.concatenate(([0.0], np.cumsum(xc * xc)))

    F = np.full(n + 1, np.inf)
    F[0] = -penalty
    last = np.zeros(n + 1, dtype=np.int64)
    ncp = np.zeros(n + 1, dtype=np.int64)
    ncp[0] = -1
    kill = np.full(n + 1, np.iinfo(np.int64).max, dtype=np.int64)

    cand = []
    for t in range(ms, n + 1):
        s_new = t - ms
        if s_new == 0 or s_new >= ms:
            cand.append(s_new)
        if prune:
            cand = [s for s in cand if kill[s] > t]
        R = np.asarray(cand, dtype=np.int64)
        seg = _meanvar_cost(cs1[t] - cs1[R], cs2[t] - cs2[R], (t - R).astype(np.float64), var_floor)
        base = F[R] + seg
        vals = base + penalty
        best = vals.min()
        tied = np.flatnonzero(vals == best)
        if tied.shape[0] > 1:
            counts = ncp[R[tied]]
            tied = tied[counts == counts.min()]
        k = tied[0]
        F[t] = best
        last[t] = R[k]
        ncp[t] = ncp[R[k]] + 1
        if prune:
            margin = 1e-10 * (1.0 + abs(best))
            for s in R[base > best + margin]:
                if kill[s] > t + ms:
                    kill[s] = t + ms

    bps = []
    s = last[n]
    while s > 0:
        bps.append(int(s))
        s = last[s]
    bps.reverse()
    return bps, float(F[n])


def lasso_cd(G, c, beta, pen, tol, max_iter):
    """Cyclic coordinate descent on the quadratic form of a lasso problem.

    Minimises ``0.5 b'Gb - c'b + sum(pen * |b|)``; ``G`` is the (scaled)
    gram matrix and ``c`` the matching moment vector.  ``beta`` is updated
    in place.  Returns ``(beta, sweeps, converged)``.
    """
    p = G.shape[0]
    q = G @ beta
    diag = np.diag(G).copy()
    for it in range(1, max_iter + 1):
        max_delta = 0.0
        for j in range(p):
            gjj = diag[j]
            if gjj <= 0.0:
                continue
            bj = beta[j]
            rho = c[j] - q[j] + gjj * bj
            pj = pen[j]
            if pj > 0.0:
                if rho > pj:
                    new = (rho - pj) / gjj
                elif rho < -pj:
                    new = (rho + pj) / gjj
                else:
                    new = 0.0
            else:
                new = rho / gjj
            d = new - bj
            if d != 0.0:
                q += G[:, j] * d
                beta[j] = new
                if abs(d) > max_delta:
                    max_delta = abs(d)
        if max_delta < tol:
            return beta, it, True
    return beta, max_iter, False


def recursive_forecast(det, tail, lag_coefs, hours):
    """Plug-in multi-step forecast for a lag regression.

    ``det`` holds the deterministic part for each step, ``tail`` the last
    ``P`` observed values (oldest first), ``lag_coefs[h, i-1]`` the
    coefficient on lag ``i`` for hour-of-day ``h`` and ``hours`` the
    hour-of-day of each forecast step.
    """
    horizon = det.shape[0]
    P = lag_coefs.shape[1]
    z = np.empty(P + horizon)
    z[:P] = tail
    for k in range(horizon):
        acc = det[k]
        if P:
            acc += float(lag_coefs[hours[k]] @ z[k:P + k][::-1])
        z[P + k] = acc
    return z[P:].copy()
