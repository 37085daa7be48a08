"""Compare the compiled and pure-Python kernels on typical workloads.

    python3 benchmarks/bench_kernels.py [--repeats N]

Prints the median seconds per call for each kernel and backend, plus the
speed-up, and checks the two backends agree.
"""

import argparse
import statistics
import time

import numpy as np

from streamcast import kernels
from streamcast.changepoint import VARIANCE_FLOOR, default_penalty


def _median_time(fn, repeats):
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples), out


def workloads(rng):
    # a loss stream of one year of daily losses with a mid-year shift
    x = np.concatenate([rng.normal(10, 2, 180), rng.normal(25, 4, 185)])
    pen = default_penalty(x.shape[0])

    # platform-sized lasso: 30 columns on the standardised gram
    n, p = 2000, 30
    X = rng.normal(size=(n, p))
    y = X[:, :5] @ rng.normal(size=5) + rng.normal(size=n)
    G, c = X.T @ X / n, X.T @ y / n
    pen_vec = np.full(p, 0.01)

    # 105-step recursive forecast with lags up to one week
    H, P = 15, 105
    det = rng.normal(10, 1, P)
    tail = rng.normal(10, 1, P)
    lag = np.zeros((H, P))
    lag[:, [0, 14, 104]] = rng.uniform(-0.2, 0.3, size=(H, 3))
    hours = np.arange(P) % H

    return {
        "pelt (n=365)": lambda b: kernels.pelt_meanvar(x, pen, 2, VARIANCE_FLOOR, True, backend=b),
        "exhaustive (n=365)": lambda b: kernels.pelt_meanvar(x, pen, 2, VARIANCE_FLOOR, False, backend=b),
        "lasso_cd (p=30)": lambda b: kernels.lasso_cd(G, c, np.zeros(p), pen_vec, 1e-10, 10000, backend=b),
        "recursive_forecast (h=105)": lambda b: kernels.recursive_forecast(det, tail, lag, hours, backend=b),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(u, v) for u, v in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.allclose(a, b, rtol=1e-10, atol=1e-12)
    return a == b or (isinstance(a, float) and np.isclose(a, b, rtol=1e-10))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)
    if kernels.BACKEND != "cython":
        print("compiled kernels unavailable; build with: python3 setup.py build_ext --inplace")
        return 1
    print(f"{'kernel':<28}{'python s':>12}{'cython s':>12}{'speed-up':>10}  agree")
    for name, fn in workloads(np.random.default_rng(0)).items():
        tp, op = _median_time(lambda: fn("python"), args.repeats)
        tc, oc = _median_time(lambda: fn("cython"), args.repeats)
        print(f"{name:<28}{tp:>12.5f}{tc:>12.5f}{tp / tc:>9.1f}x  {_same(op, oc)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
