"""Backend selection for the batched polynomial kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback is loaded.  Set ``MINTIME_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _kernels_py

if os.environ.get("MINTIME_PURE_PYTHON"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"


def poly_value_grad(exps, coeffs, pts):
    """Value and gradient of ``sum_j coeffs[j] * prod_v pts[:, v]**exps[j, v]``.

    Returns ``(val, grad)`` with shapes ``(P,)`` and ``(P, k)``.
    """
    return _impl.poly_value_grad(
        np.ascontiguousarray(exps, dtype=np.int64),
        np.ascontiguousarray(coeffs, dtype=np.float64),
        np.ascontiguousarray(np.atleast_2d(pts), dtype=np.float64),
    )


def poly_value(exps, coeffs, pts):
    """Value only; see :func:`poly_value_grad`."""
    return _impl.poly_value(
        np.ascontiguousarray(exps, dtype=np.int64),
        np.ascontiguousarray(coeffs, dtype=np.float64),
        np.ascontiguousarray(np.atleast_2d(pts), dtype=np.float64),
    )
