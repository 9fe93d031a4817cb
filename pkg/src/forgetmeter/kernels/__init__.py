"""Hot numerical kernels with a compiled core and a numpy fallback.

The Cython extension is used when it was built and imports cleanly; set
``FORGETMETER_KERNELS=python`` to force the numpy implementation. Both
backends share one contract and are cross-checked in the test-suite.
"""
import os

import numpy as np

from . import _pykernels

MSE = _pykernels.MSE
XENT = _pykernels.XENT

_ext = None
if os.environ.get("FORGETMETER_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _ext
    except ImportError:  # extension not built
        _ext = None

BACKEND = "cython" if _ext is not None else "python"
_impl = _ext if _ext is not None else _pykernels


def backends() -> dict:
    """Available backends keyed by name (for tests and benchmarks)."""
    out = {"python": _pykernels}
    if _ext is not None:
        out["cython"] = _ext
    return out


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def mlp_forward(W1, b1, W2, b2, X):
    X = np.asarray(X, dtype=np.float64)
    return _impl.mlp_forward(_c(W1), _c(b1), _c(W2), _c(b2), X)


def mlp_grad(W1, b1, W2, b2, X, T, mask=None, loss_kind=MSE):
    X = np.asarray(X, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
    return _impl.mlp_grad(_c(W1), _c(b1), _c(W2), _c(b2), X, T, mask, loss_kind)


def rbf_sum(a, b, gamma):
    return float(_impl.rbf_sum(_c(a), _c(b), float(gamma)))


def rbf_block_sums(S, R, gamma):
    return _impl.rbf_block_sums(_c(S), _c(R), float(gamma))
