# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot loops in ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, fabs, M_PI, INFINITY

cnp.import_array()


cdef inline double _meanvar_cost(double s1, double s2, double n,
                                 double var_floor, double log_2pi,
                                 double log_floor) nogil:
    cdef double mean = s1 / n
    cdef double var = s2 / n - mean * mean
    if var < 0.0:
        var = 0.0
    if var >= var_floor:
        return n * (log_2pi + log(var) + 1.0)
    return n * (log_2pi + log_floor) + n * var / var_floor


def pelt_meanvar(x, double penalty, Py_ssize_t min_seglen, double var_floor,
                 bint prune=True):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xa = np.asarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xa.shape[0]
    cdef Py_ssize_t ms = min_seglen
    cdef double mu = xa.mean()
    cdef double log_2pi = log(2.0 * M_PI)
    cdef double log_floor = log(var_floor)

    cdef cnp.ndarray[cnp.float64_t, ndim=1] cs1 = np.zeros(n + 1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cs2 = np.zeros(n + 1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] F = np.full(n + 1, np.inf)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] last = np.zeros(n + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ncp = np.zeros(n + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] kill = np.full(n + 1, np.iinfo(np.int64).max, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cand = np.zeros(n + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] base = np.zeros(n + 1)

    cdef Py_ssize_t i, k, t, s, s_new, m = 0, m2, best_k
    cdef double xc, v, best, margin, a1, a2

    # prefix sums of the centred series; np.cumsum order is sequential too
    xcen = xa - mu
    cs1[1:] = np.cumsum(xcen)
    cs2[1:] = np.cumsum(xcen * xcen)

    F[0] = -penalty
    ncp[0] = -1
    for t in range(ms, n + 1):
        s_new = t - ms
        if s_new == 0 or s_new >= ms:
            cand[m] = s_new
            m += 1
        if prune:
            m2 = 0
            for k in range(m):
                if kill[cand[k]] > t:
                    cand[m2] = cand[k]
                    m2 += 1
            m = m2
        best = INFINITY
        best_k = -1
        for k in range(m):
            s = cand[k]
            a1 = cs1[t] - cs1[s]
            a2 = cs2[t] - cs2[s]
            base[k] = F[s] + _meanvar_cost(a1, a2, <double>(t - s), var_floor, log_2pi, log_floor)
            v = base[k] + penalty
            if v < best:
                best = v
                best_k = k
            elif v == best and ncp[s] < ncp[cand[best_k]]:
                best_k = k
        F[t] = best
        last[t] = cand[best_k]
        ncp[t] = ncp[cand[best_k]] + 1
        if prune:
            margin = 1e-10 * (1.0 + fabs(best))
            for k in range(m):
                if base[k] > best + margin:
                    s = cand[k]
                    if kill[s] > t + ms:
                        kill[s] = t + ms

    bps = []
    s = last[n]
    while s > 0:
        bps.append(int(s))
        s = last[s]
    bps.reverse()
    return bps, float(F[n])


def lasso_cd(const double[:, ::1] G, const double[::1] c, double[::1] beta, const double[::1] pen,
             double tol, Py_ssize_t max_iter):
    cdef Py_ssize_t p = G.shape[0]
    cdef Py_ssize_t i, j, it
    cdef double gjj, bj, rho, pj, new, d, max_delta, acc
    cdef double[::1] q = np.zeros(p)
    for i in range(p):
        acc = 0.0
        for j in range(p):
            acc += G[i, j] * beta[j]
        q[i] = acc
    for it in range(1, max_iter + 1):
        max_delta = 0.0
        for j in range(p):
            gjj = G[j, j]
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
                # G is symmetric: walk row j for contiguous access
                for i in range(p):
                    q[i] += G[j, i] * d
                beta[j] = new
                if fabs(d) > max_delta:
                    max_delta = fabs(d)
        if max_delta < tol:
            return np.asarray(beta), it, True
    return np.asarray(beta), max_iter, False


def recursive_forecast(const double[::1] det, const double[::1] tail, const double[:, ::1] lag_coefs,
                       const long[::1] hours):
    cdef Py_ssize_t horizon = det.shape[0]
    cdef Py_ssize_t P = lag_coefs.shape[1]
    cdef Py_ssize_t k, i
    cdef double acc, a
    out = np.empty(P + horizon)
    cdef double[::1] z = out
    for i in range(P):
        z[i] = tail[i]
    for k in range(horizon):
        acc = det[k]
        for i in range(1, P + 1):
            a = lag_coefs[hours[k], i - 1]
            if a != 0.0:
                acc += a * z[P + k - i]
        z[P + k] = acc
    return out[P:].copy()
