# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled batch evaluation of a polynomial and its gradient from an exponent table."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def poly_value_grad(const long[:, ::1] exps, const double[::1] coeffs,
                    const double[:, ::1] pts):
    cdef Py_ssize_t n_mono = exps.shape[0]
    cdef Py_ssize_t k = exps.shape[1]
    cdef Py_ssize_t n_pts = pts.shape[0]
    cdef long max_deg = 0
    cdef Py_ssize_t i, j, v, w
    cdef long e
    for j in range(n_mono):
        e = 0
        for v in range(k):
            e += exps[j, v]
        if e > max_deg:
            max_deg = e
    val_arr = np.zeros(n_pts, dtype=np.float64)
    grad_arr = np.zeros((n_pts, k), dtype=np.float64)
    cdef double[::1] val = val_arr
    cdef double[:, ::1] grad = grad_arr
    cdef double[:, ::1] pw = np.empty((k, max_deg + 1), dtype=np.float64)
    cdef double c, prod, term, s
    for i in range(n_pts):
        for v in range(k):
            pw[v, 0] = 1.0
            for e in range(1, max_deg + 1):
                pw[v, e] = pw[v, e - 1] * pts[i, v]
        s = 0.0
        for j in range(n_mono):
            c = coeffs[j]
            if c == 0.0:
                continue
            prod = c
            for v in range(k):
                prod = prod * pw[v, exps[j, v]]
            s += prod
            for v in range(k):
                e = exps[j, v]
                if e == 0:
                    continue
                term = c * e * pw[v, e - 1]
                for w in range(k):
                    if w != v:
                        term = term * pw[w, exps[j, w]]
                grad[i, v] += term
        val[i] = s
    return val_arr, grad_arr


def poly_value(const long[:, ::1] exps, const double[::1] coeffs,
               const double[:, ::1] pts):
    cdef Py_ssize_t n_mono = exps.shape[0]
    cdef Py_ssize_t k = exps.shape[1]
    cdef Py_ssize_t n_pts = pts.shape[0]
    cdef long max_deg = 0
    cdef Py_ssize_t i, j, v
    cdef long e
    for j in range(n_mono):
        e = 0
        for v in range(k):
            e += exps[j, v]
        if e > max_deg:
            max_deg = e
    val_arr = np.zeros(n_pts, dtype=np.float64)
    cdef double[::1] val = val_arr
    cdef double[:, ::1] pw = np.empty((k, max_deg + 1), dtype=np.float64)
    cdef double prod, s
    for i in range(n_pts):
        for v in range(k):
            pw[v, 0] = 1.0
            for e in range(1, max_deg + 1):
                pw[v, e] = pw[v, e - 1] * pts[i, v]
        s = 0.0
        for j in range(n_mono):
            if coeffs[j] == 0.0:
                continue
            prod = coeffs[j]
            for v in range(k):
                prod = prod * pw[v, exps[j, v]]
            s += prod
        val[i] = s
    return val_arr
