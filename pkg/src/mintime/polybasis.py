"""Monomial basis in the variables ``(t, x_1, ..., x_n)``.

Monomials are stored as an exponent table in graded-lexicographic order
(total degree first, then lexicographic with ``t`` most significant), so the
basis for ``n=1, d=2`` reads ``[1, t, x, t^2, t x, x^2]``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb

import numpy as np

from . import kernels


def basis_dimension(n: int, d: int) -> int:
    """Number of monomials of total degree <= d in n+1 variables."""
    if n < 1 or d < 0:
        raise ValueError(f"need n >= 1 and d >= 0, got n={n}, d={d}")
    return comb(n + 1 + d, d)


def _graded_lex(nvars: int, d: int) -> np.ndarray:
    rows = []
    for deg in range(d + 1):
        # lexicographically descending exponent tuples of this total degree
        block = [e for e in itertools.product(range(deg, -1, -1), repeat=nvars)
                 if sum(e) == deg]
        rows.extend(block)
    return np.array(rows, dtype=np.int64).reshape(-1, nvars)


@dataclass(frozen=True)
class PolyBasis:
    n_states: int
    degree: int
    exps: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        basis_dimension(self.n_states, self.degree)
        exps = _graded_lex(self.n_states + 1, self.degree)
        exps.setflags(write=False)
        object.__setattr__(self, "exps", exps)

    @property
    def dim(self) -> int:
        return self.exps.shape[0]

    @property
    def nvars(self) -> int:
        return self.n_states + 1

    def _point(self, t, x):
        x = np.asarray(x, dtype=float).ravel()
        if x.shape[0] != self.n_states:
            raise ValueError(f"expected state of length {self.n_states}, got {x.shape[0]}")
        return np.concatenate([[float(t)], x])

    def eval(self, t, x) -> np.ndarray:
        """Vector of all monomials at ``(t, x)``."""
        y = self._point(t, x)
        return np.prod(y[None, :] ** self.exps, axis=1)

    def jacobian(self, t, x) -> np.ndarray:
        """``(N, n+1)`` matrix; row i holds (d/dt, d/dx_1, ...) of monomial i."""
        y = self._point(t, x)
        e = self.exps
        jac = np.zeros((self.dim, self.nvars))
        for v in range(self.nvars):
            lowered = e.copy()
            lowered[:, v] -= 1
            mask = e[:, v] > 0
            jac[mask, v] = e[mask, v] * np.prod(y[None, :] ** lowered[mask], axis=1)
        return jac

    def eval_many(self, pts) -> np.ndarray:
        """``(P, N)`` monomial values at the rows ``(t, x)`` of ``pts``."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.prod(pts[:, None, :] ** self.exps[None, :, :], axis=2)

    def jacobian_many(self, pts) -> np.ndarray:
        """``(P, N, n+1)`` stacked Jacobians."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.zeros((pts.shape[0], self.dim, self.nvars))
        for v in range(self.nvars):
            lowered = self.exps.copy()
            lowered[:, v] -= 1
            mask = self.exps[:, v] > 0
            out[:, mask, v] = self.exps[mask, v] * np.prod(
                pts[:, None, :] ** lowered[None, mask, :], axis=2)
        return out

    def coeffs_of(self, terms: dict) -> np.ndarray:
        """Coefficient vector from ``{exponent tuple: coefficient}``."""
        index = {tuple(e): i for i, e in enumerate(self.exps.tolist())}
        theta = np.zeros(self.dim)
        for e, c in terms.items():
            theta[index[tuple(e)]] += c
        return theta

    def index_of(self, exponent) -> int:
        matches = np.flatnonzero((self.exps == np.asarray(exponent)).all(axis=1))
        if len(matches) == 0:
            raise KeyError(exponent)
        return int(matches[0])


class Theta:
    """Coefficients of ``V = coeffs . Phi`` in a :class:`PolyBasis`."""

    def __init__(self, basis: PolyBasis, coeffs):
        coeffs = np.asarray(coeffs, dtype=float).ravel()
        if coeffs.shape[0] != basis.dim:
            raise ValueError(f"coefficient length {coeffs.shape[0]} != basis dim {basis.dim}")
        self.basis = basis
        self.coeffs = coeffs

    def __repr__(self):
        return f"Theta(n={self.basis.n_states}, d={self.basis.degree}, coeffs={self.coeffs!r})"

    def __add__(self, other: "Theta") -> "Theta":
        return Theta(self.basis, self.coeffs + other.coeffs)

    def scaled(self, s: float) -> "Theta":
        return Theta(self.basis, s * self.coeffs)

    def value(self, t, x) -> float:
        return float(self.coeffs @ self.basis.eval(t, x))

    def value_many(self, pts) -> np.ndarray:
        return kernels.poly_value(self.basis.exps, self.coeffs, pts)

    def value_grad_many(self, pts):
        """Batched ``(V, grad)`` with ``grad[:, 0] = dV/dt`` and ``grad[:, 1:] = grad_x V``."""
        return kernels.poly_value_grad(self.basis.exps, self.coeffs, pts)

    @classmethod
    def zeros(cls, basis: PolyBasis) -> "Theta":
        return cls(basis, np.zeros(basis.dim))


def value_and_grad(theta: Theta, t, x):
    """Return ``(V, dV/dt, grad_x V)`` at a single point."""
    basis = theta.basis
    phi = basis.eval(t, x)
    jac = basis.jacobian(t, x)
    g = theta.coeffs @ jac
    return float(theta.coeffs @ phi), float(g[0]), g[1:]


def basis_eval(basis: PolyBasis, t, x) -> np.ndarray:
    return basis.eval(t, x)


def basis_jacobian(basis: PolyBasis, t, x) -> np.ndarray:
    return basis.jacobian(t, x)


def derivative_coeffs(basis: PolyBasis, coeffs, var: int) -> np.ndarray:
    """Coefficients of ``d/dy_var`` of ``coeffs . Phi`` in the same basis (``y = (t, x)``)."""
    coeffs = np.asarray(coeffs, dtype=float)
    out = np.zeros(basis.dim)
    index = {tuple(e): i for i, e in enumerate(basis.exps.tolist())}
    for i, e in enumerate(basis.exps.tolist()):
        if e[var] > 0 and coeffs[i] != 0.0:
            lowered = list(e)
            lowered[var] -= 1
            out[index[tuple(lowered)]] += e[var] * coeffs[i]
    return out


class BoxBound:
    """Sound bounds on ``sup |q|`` over boxes for polynomials ``q`` in a basis.

    The polynomial is re-expanded around each box center, and the absolute
    values of the shifted coefficients are summed against the box half-widths.
    """

    def __init__(self, basis: PolyBasis):
        self.basis = basis
        exps = basis.exps
        index = {tuple(e): i for i, e in enumerate(exps.tolist())}
        src, dst, mult, power = [], [], [], []
        for a, alpha in enumerate(exps.tolist()):
            for beta in itertools.product(*(range(k + 1) for k in alpha)):
                src.append(a)
                dst.append(index[beta])
                mult.append(np.prod([comb(ai, bi) for ai, bi in zip(alpha, beta)]))
                power.append([ai - bi for ai, bi in zip(alpha, beta)])
        self._src = np.array(src)
        self._dst = np.array(dst)
        self._mult = np.array(mult, dtype=float)
        self._power = np.array(power, dtype=np.int64).reshape(-1, basis.nvars)
        self._scatter = np.zeros((len(dst), basis.dim))
        self._scatter[np.arange(len(dst)), self._dst] = 1.0

    def _powers(self, pts, exps):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        d = self.basis.degree
        cache = pts[:, :, None] ** np.arange(d + 1)[None, None, :]
        out = np.ones((pts.shape[0], exps.shape[0]))
        for v in range(self.basis.nvars):
            out *= cache[:, v, exps[:, v]]
        return out

    def shifted(self, coeffs, centers) -> np.ndarray:
        """``(B, N)`` coefficients of ``q(center + delta)`` in powers of ``delta``."""
        coeffs = np.asarray(coeffs, dtype=float)
        terms = self._powers(centers, self._power) * (self._mult * coeffs[self._src])[None, :]
        return terms @ self._scatter

    def bound(self, coeffs, centers, radii) -> np.ndarray:
        """Upper bounds on ``|q|`` over the boxes ``center +- radii`` (one per row)."""
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        radii = np.broadcast_to(np.asarray(radii, dtype=float), centers.shape)
        weights = self._powers(radii, self.basis.exps)
        return np.sum(np.abs(self.shifted(coeffs, centers)) * weights, axis=1)
