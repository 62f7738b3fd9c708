"""Backend selection for the inner loops.

The compiled ``_ckernels`` extension is used when it was built; otherwise
(or with ``VARCLUST_PURE_PYTHON=1`` in the environment) the numpy versions
in ``_pykernels`` are used.  Wrappers normalise dtype and memory layout so
both backends see identical inputs.
"""

import os

import numpy as np

from . import _pykernels

_compiled = None
if os.environ.get("VARCLUST_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

HAVE_COMPILED = _compiled is not None
BACKEND = "cython" if HAVE_COMPILED else "python"


def _impl(backend):
    if backend is None:
        backend = BACKEND
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return _compiled
    if backend == "python":
        return _pykernels
    raise ValueError(f"unknown backend {backend!r}")


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def psi_grid(R, yq, S, B, Linv, backend=None):
    """psi[n, k] = trace(Linv_k S_n Linv_k^T) + ||(yq_n - R_n B_k) Linv_k^T||_F^2."""
    return _impl(backend).psi_grid(_c(R), _c(yq), _c(S), _c(B), _c(Linv))


def weighted_gram(R, yq, S, B, w, backend=None):
    """sum_n w_n (S_n + D_n^T D_n) with D_n = yq_n - R_n B."""
    return _impl(backend).weighted_gram(_c(R), _c(yq), _c(S), _c(B), _c(w))


def var_recursion(intercept, lags, noise, backend=None):
    """Y_t = c + sum_i A_i Y_{t-i} + noise_t from zero initial conditions."""
    lags = np.asarray(lags, dtype=np.float64).reshape(-1, len(intercept), len(intercept))
    return _impl(backend).var_recursion(_c(intercept), _c(lags), _c(noise))
