"""Backend selection for the hot loops.

The compiled extension is used when it imports cleanly; set
``STREAMCAST_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

import numpy as np

from . import _pykernels

if os.environ.get("STREAMCAST_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"


def pelt_meanvar(x, penalty, min_seglen, var_floor, prune=True, backend=None):
    impl = _resolve(backend)
    return impl.pelt_meanvar(np.ascontiguousarray(x, dtype=np.float64),
                             float(penalty), int(min_seglen), float(var_floor), prune)


def lasso_cd(G, c, beta, pen, tol, max_iter, backend=None):
    impl = _resolve(backend)
    return impl.lasso_cd(
        np.ascontiguousarray(G, dtype=np.float64),
        np.ascontiguousarray(c, dtype=np.float64),
        np.array(beta, dtype=np.float64, order="C"),
        np.ascontiguousarray(pen, dtype=np.float64),
        float(tol),
        int(max_iter),
    )


def recursive_forecast(det, tail, lag_coefs, hours, backend=None):
    impl = _resolve(backend)
    lag_coefs = np.asarray(lag_coefs, dtype=np.float64)
    return impl.recursive_forecast(
        np.ascontiguousarray(det, dtype=np.float64),
        np.ascontiguousarray(np.asarray(tail, dtype=np.float64)[-lag_coefs.shape[1]:]),
        np.ascontiguousarray(lag_coefs, dtype=np.float64),
        np.ascontiguousarray(hours, dtype=np.int64),
    )


def _resolve(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _pykernels
    if backend == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown backend {backend!r}")
