"""Pure numpy fallback for the compiled polynomial kernels.

Same signatures and results as ``mintime._kernels``; points are processed in
chunks so the monomial tensor stays small.
"""
import numpy as np

_CHUNK = 16384


def _powers(pts, max_deg):
    # (k, max_deg + 1, P)
    pw = np.empty((pts.shape[1], max_deg + 1, pts.shape[0]))
    pw[:, 0, :] = 1.0
    for e in range(1, max_deg + 1):
        pw[:, e, :] = pw[:, e - 1, :] * pts.T
    return pw


def poly_value_grad(exps, coeffs, pts):
    exps = np.asarray(exps, dtype=np.int64)
    coeffs = np.asarray(coeffs, dtype=float)
    pts = np.asarray(pts, dtype=float)
    k = exps.shape[1]
    max_deg = int(exps.sum(axis=1).max()) if len(exps) else 0
    cols = np.arange(k)[None, :]
    val = np.empty(pts.shape[0])
    grad = np.empty((pts.shape[0], k))
    for start in range(0, pts.shape[0], _CHUNK):
        chunk = pts[start:start + _CHUNK]
        pw = _powers(chunk, max_deg)
        dpw = np.zeros_like(pw)
        dpw[:, 1:, :] = pw[:, :-1, :] * np.arange(1, max_deg + 1)[None, :, None]
        factors = pw[cols, exps]                      # (N, k, P)
        val[start:start + _CHUNK] = coeffs @ factors.prod(axis=1)
        for v in range(k):
            f = factors.copy()
            f[:, v, :] = dpw[v, exps[:, v], :]
            grad[start:start + _CHUNK, v] = coeffs @ f.prod(axis=1)
    return val, grad


def poly_value(exps, coeffs, pts):
    exps = np.asarray(exps, dtype=np.int64)
    coeffs = np.asarray(coeffs, dtype=float)
    pts = np.asarray(pts, dtype=float)
    k = exps.shape[1]
    max_deg = int(exps.sum(axis=1).max()) if len(exps) else 0
    cols = np.arange(k)[None, :]
    val = np.empty(pts.shape[0])
    for start in range(0, pts.shape[0], _CHUNK):
        chunk = pts[start:start + _CHUNK]
        pw = _powers(chunk, max_deg)
        val[start:start + _CHUNK] = coeffs @ pw[cols, exps].prod(axis=1)
    return val
