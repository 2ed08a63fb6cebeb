import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mintime.polybasis import (BoxBound, PolyBasis, Theta, basis_dimension, basis_eval,
                               basis_jacobian, derivative_coeffs, value_and_grad)


def fd_jacobian(basis, t, x, h=1e-5):
    y = np.concatenate([[t], x])
    cols = []
    for v in range(basis.nvars):
        e = np.zeros_like(y)
        e[v] = h
        hi = basis.eval((y + e)[0], (y + e)[1:])
        lo = basis.eval((y - e)[0], (y - e)[1:])
        cols.append((hi - lo) / (2 * h))
    return np.stack(cols, axis=1)


@pytest.mark.parametrize("n,d,expected", [(2, 2, 10), (2, 0, 1), (1, 3, 10)])
def test_basis_dimension_examples(n, d, expected):
    assert basis_dimension(n, d) == expected


def test_basis_dimension_rejects_bad_input():
    with pytest.raises(ValueError):
        basis_dimension(0, 2)
    with pytest.raises(ValueError):
        basis_dimension(2, -1)


@pytest.mark.parametrize("n,d", [(1, 0), (1, 4), (2, 3), (6, 4)])
def test_exponent_table_is_graded_bijection(n, d):
    b = PolyBasis(n, d)
    assert b.dim == comb(n + 1 + d, d)
    rows = [tuple(e) for e in b.exps.tolist()]
    assert rows[0] == (0,) * (n + 1)
    everything = {e for e in itertools.product(range(d + 1), repeat=n + 1) if sum(e) <= d}
    assert set(rows) == everything
    assert len(set(rows)) == len(rows)
    degs = b.exps.sum(axis=1)
    assert np.all(np.diff(degs) >= 0)


def test_eval_examples():
    b = PolyBasis(1, 2)
    np.testing.assert_array_equal(basis_eval(b, 0.0, [0.0]), [1, 0, 0, 0, 0, 0])
    np.testing.assert_array_equal(basis_eval(b, 1.0, [2.0]), [1, 1, 2, 1, 2, 4])
    np.testing.assert_array_equal(basis_eval(PolyBasis(1, 1), 2.0, [3.0]), [1, 2, 3])


def test_eval_dimension_mismatch():
    with pytest.raises(ValueError):
        PolyBasis(2, 2).eval(0.0, [1.0])
    with pytest.raises(ValueError):
        PolyBasis(2, 2).jacobian(0.0, [1.0, 2.0, 3.0])


def test_jacobian_examples():
    b = PolyBasis(1, 1)
    np.testing.assert_array_equal(basis_jacobian(b, 0.3, [-1.7]), [[0, 0], [1, 0], [0, 1]])
    jac = basis_jacobian(PolyBasis(3, 3), 0.4, [0.1, -0.2, 0.3])
    np.testing.assert_array_equal(jac[0], 0.0)


def test_jacobian_matches_finite_differences_d4():
    rng = np.random.default_rng(1)
    for n in (1, 2, 3):
        b = PolyBasis(n, 4)
        for _ in range(20):
            t = rng.uniform(0, 1.3)
            x = rng.uniform(-1, 1, n)
            jac = b.jacobian(t, x)
            fd = fd_jacobian(b, t, x)
            assert np.max(np.abs(jac - fd)) <= 1e-6 * max(1.0, np.max(np.abs(jac)))


def test_batched_matches_pointwise():
    b = PolyBasis(2, 3)
    rng = np.random.default_rng(2)
    pts = rng.uniform(-1, 1, (7, 3))
    np.testing.assert_allclose(b.eval_many(pts), [b.eval(p[0], p[1:]) for p in pts])
    np.testing.assert_allclose(b.jacobian_many(pts), [b.jacobian(p[0], p[1:]) for p in pts])


def test_value_and_grad_hat_polynomial():
    T = 1.3
    b = PolyBasis(2, 3)
    theta = Theta(b, b.coeffs_of({(1, 0, 0): 1.0, (0, 0, 0): -1.0 - T}))
    V, dVdt, gx = value_and_grad(theta, 0.0, [0.4, -0.2])
    assert V == pytest.approx(-2.3, abs=1e-15)
    assert dVdt == 1.0
    np.testing.assert_array_equal(gx, 0.0)


def test_value_and_grad_zero():
    b = PolyBasis(2, 2)
    V, dVdt, gx = value_and_grad(Theta.zeros(b), 0.7, [0.3, 0.1])
    assert (V, dVdt) == (0.0, 0.0)
    np.testing.assert_array_equal(gx, 0.0)


def test_value_and_grad_vs_finite_differences():
    rng = np.random.default_rng(3)
    b = PolyBasis(2, 3)
    h = 1e-5
    for _ in range(20):
        theta = Theta(b, rng.standard_normal(b.dim))
        t, x = rng.uniform(0, 1), rng.uniform(-1, 1, 2)
        V, dVdt, gx = value_and_grad(theta, t, x)
        grad = np.concatenate([[dVdt], gx])
        y = np.concatenate([[t], x])
        fd = []
        for v in range(3):
            e = np.zeros(3)
            e[v] = h
            fd.append((theta.value((y + e)[0], (y + e)[1:])
                       - theta.value((y - e)[0], (y - e)[1:])) / (2 * h))
        assert np.max(np.abs(grad - fd)) <= 1e-6 * max(1.0, np.max(np.abs(grad)))


def test_theta_length_checked():
    with pytest.raises(ValueError):
        Theta(PolyBasis(1, 2), np.zeros(5))


def test_batched_value_grad_kernel():
    rng = np.random.default_rng(4)
    b = PolyBasis(3, 3)
    theta = Theta(b, rng.standard_normal(b.dim))
    pts = rng.uniform(-1, 1, (11, 4))
    val, grad = theta.value_grad_many(pts)
    np.testing.assert_allclose(val, b.eval_many(pts) @ theta.coeffs, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(grad, np.einsum("pnk,n->pk", b.jacobian_many(pts), theta.coeffs),
                               rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(theta.value_many(pts), val, rtol=1e-14, atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 3), d=st.integers(0, 4), seed=st.integers(0, 2**31 - 1))
def test_eval_is_linear_in_theta(n, d, seed):
    rng = np.random.default_rng(seed)
    b = PolyBasis(n, d)
    a, c = rng.standard_normal(b.dim), rng.standard_normal(b.dim)
    t, x = rng.uniform(0, 1.3), rng.uniform(-1, 1, n)
    lhs = Theta(b, a + c).value(t, x)
    rhs = Theta(b, a).value(t, x) + Theta(b, c).value(t, x)
    scale = np.abs(a).sum() + np.abs(c).sum()
    assert abs(lhs - rhs) <= 10 * np.finfo(float).eps * max(scale, 1.0)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 3), d=st.integers(1, 4), var=st.integers(0, 3),
       seed=st.integers(0, 2**31 - 1))
def test_derivative_coeffs_match_gradient(n, d, var, seed):
    var = var % (n + 1)
    rng = np.random.default_rng(seed)
    b = PolyBasis(n, d)
    theta = Theta(b, rng.standard_normal(b.dim))
    pts = rng.uniform(-1, 1, (5, n + 1))
    _, grad = theta.value_grad_many(pts)
    dq = Theta(b, derivative_coeffs(b, theta.coeffs, var))
    np.testing.assert_allclose(dq.value_many(pts), grad[:, var], rtol=1e-10, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 3), d=st.integers(0, 4), seed=st.integers(0, 2**31 - 1))
def test_box_bound_dominates_samples(n, d, seed):
    rng = np.random.default_rng(seed)
    b = PolyBasis(n, d)
    coeffs = rng.standard_normal(b.dim)
    center = rng.uniform(-1, 1, n + 1)
    radii = rng.uniform(0.01, 0.5, n + 1)
    bound = BoxBound(b).bound(coeffs, center, radii)[0]
    pts = center + radii * rng.uniform(-1, 1, (500, n + 1))
    vals = np.abs(Theta(b, coeffs).value_many(pts))
    assert vals.max() <= bound + 1e-12


def test_box_bound_shift_is_exact_reexpansion():
    rng = np.random.default_rng(5)
    b = PolyBasis(2, 3)
    coeffs = rng.standard_normal(b.dim)
    center = rng.uniform(-1, 1, 3)
    shifted = BoxBound(b).shifted(coeffs, center)[0]
    delta = rng.uniform(-0.3, 0.3, (9, 3))
    np.testing.assert_allclose(Theta(b, shifted).value_many(delta),
                               Theta(b, coeffs).value_many(center + delta), atol=1e-12)
