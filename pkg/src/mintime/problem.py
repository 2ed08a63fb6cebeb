"""Minimal-time control problems: sets, dynamics and the built-in benchmarks.

Dynamics callbacks take ``(t, x, u)`` and must accept both single points
(``x`` of shape ``(n,)``) and batches (``x`` of shape ``(P, n)``, ``t`` scalar
or shape ``(P,)``).  They must be pure and reentrant.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class ProblemError(ValueError):
    pass


class Region:
    """A box or a Euclidean ball in R^dim."""

    def __init__(self, kind, lo=None, hi=None, center=None, radius=None):
        self.kind = kind
        if kind == "box":
            self.lo = np.asarray(lo, dtype=float).ravel()
            self.hi = np.asarray(hi, dtype=float).ravel()
            if self.lo.shape != self.hi.shape or np.any(self.lo > self.hi):
                raise ProblemError("box needs lo <= hi per dimension")
        elif kind == "ball":
            self.center = np.asarray(center, dtype=float).ravel()
            self.radius = float(radius)
            if self.radius <= 0:
                raise ProblemError("ball radius must be positive")
        else:
            raise ProblemError(f"unknown region kind {kind!r}")

    @classmethod
    def box(cls, lo, hi):
        return cls("box", lo=lo, hi=hi)

    @classmethod
    def ball(cls, center, radius):
        return cls("ball", center=center, radius=radius)

    @property
    def dim(self):
        return self.lo.shape[0] if self.kind == "box" else self.center.shape[0]

    def __repr__(self):
        if self.kind == "box":
            return f"Region.box({self.lo.tolist()}, {self.hi.tolist()})"
        return f"Region.ball({self.center.tolist()}, {self.radius})"

    def hull(self):
        """Bounding box ``(lo, hi)``."""
        if self.kind == "box":
            return self.lo.copy(), self.hi.copy()
        return self.center - self.radius, self.center + self.radius

    def contains(self, y, tol=0.0):
        y = np.asarray(y, dtype=float)
        if self.kind == "box":
            return np.all((y >= self.lo - tol) & (y <= self.hi + tol), axis=-1)
        return np.linalg.norm(y - self.center, axis=-1) <= self.radius + tol

    def signed_distance(self, y):
        """Negative inside, positive outside (exact for balls, an L-inf proxy for boxes)."""
        y = np.asarray(y, dtype=float)
        if self.kind == "box":
            return np.max(np.maximum(self.lo - y, y - self.hi), axis=-1)
        return np.linalg.norm(y - self.center, axis=-1) - self.radius

    def project(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "box":
            return np.clip(y, self.lo, self.hi)
        d = y - self.center
        r = np.linalg.norm(d)
        if r <= self.radius:
            return y.copy()
        return self.center + d * (self.radius / r)

    def sample(self, rng, size=None):
        """Uniform samples; shape ``(dim,)`` if ``size`` is None else ``(size, dim)``."""
        k = 1 if size is None else size
        if self.kind == "box":
            out = self.lo + (self.hi - self.lo) * rng.random((k, self.dim))
        else:
            g = rng.standard_normal((k, self.dim))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            r = self.radius * rng.random(k) ** (1.0 / self.dim)
            out = self.center + g * r[:, None]
        return out[0] if size is None else out

    def to_dict(self):
        if self.kind == "box":
            return {"kind": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}
        return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}


def region_contains(r: Region, y) -> bool:
    return bool(r.contains(y))


def region_sample(r: Region, rng):
    return r.sample(rng)


@dataclass(frozen=True, eq=False)
class ControlProblem:
    """The tuple ``(f, X, U, K, T, x0)`` plus derivative bounds for certification.

    ``lip_f``, ``cf_bound`` and ``hess_f`` bound, over ``[0,T] x X x U``, the
    first partial derivatives of each component of ``f``, its Euclidean norm,
    and its second partial derivatives in the ``t`` and ``x`` directions.
    ``affine`` optionally gives ``(drift, input_matrix)`` with
    ``f = drift(t, x) + input_matrix(t, x) @ u``; it enables closed-form
    minimization over ``U``.
    """

    name: str
    n: int
    m: int
    dynamics: Callable
    X: Region
    U: Region
    K: Region
    T: float
    x0: np.ndarray
    lip_f: float = 0.0
    cf_bound: float = 0.0
    hess_f: float = 0.0
    affine: Optional[tuple] = None
    heuristic: Optional[Callable] = field(default=None, compare=False)
    u_grid: int = 720

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).ravel())
        if self.x0.shape[0] != self.n or self.X.dim != self.n or self.K.dim != self.n:
            raise ProblemError("state dimension mismatch")
        if self.U.dim != self.m:
            raise ProblemError("control dimension mismatch")
        if not self.X.contains(self.x0, tol=1e-12):
            raise ProblemError("x0 must lie in X")

    def f(self, t, x, u):
        return self.dynamics(t, x, u)


def dynamics_eval(p: ControlProblem, t, x, u):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (p.n,) or u.shape != (p.m,):
        raise ProblemError(f"expected x of shape ({p.n},) and u of shape ({p.m},)")
    out = np.asarray(p.dynamics(t, x, u), dtype=float)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"non-finite dynamics at t={t}, x={x.tolist()}, u={u.tolist()}")
    return out


@dataclass
class Trajectory:
    dt: float
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    hit: bool
    t_hit: Optional[float]

    def to_csv(self, path):
        n = self.states.shape[1]
        m = self.controls.shape[1]
        header = ["t"] + [f"x_{i + 1}" for i in range(n)] + [f"u_{i + 1}" for i in range(m)]
        # last state has no control applied after it
        ctrl = np.vstack([self.controls, np.full((len(self.states) - len(self.controls), m), np.nan)])
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for t, x, u in zip(self.times, self.states, ctrl):
                fh.write(",".join(repr(float(v)) for v in [t, *x, *u]) + "\n")


# ---------------------------------------------------------------------------
# built-in problems
# ---------------------------------------------------------------------------

def _zermelo_f(t, x, u):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    flow = 0.5 * (1.0 + np.asarray(t)) * np.sin(np.pi * x[..., 1])
    return np.stack([u[..., 0] + flow, u[..., 1] + 0.0 * flow], axis=-1)


def _zermelo_drift(t, x):
    x = np.asarray(x, dtype=float)
    flow = 0.5 * (1.0 + np.asarray(t)) * np.sin(np.pi * x[..., 1])
    return np.stack([flow, 0.0 * flow], axis=-1)


def _identity_input(m):
    def g(t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(m), x.shape[:-1] + (m, m))
    return g


def _pursuit_ball(p):
    """Steer toward the target center at full speed, cancelling the drift."""
    center = p.K.center if p.K.kind == "ball" else 0.5 * (p.K.lo + p.K.hi)
    drift, _ = p.affine
    r = p.U.radius

    def control(t, x):
        w = drift(t, x)
        d = center - x
        d = d / np.linalg.norm(d)
        dw = d @ w
        s = dw + np.sqrt(max(dw * dw - w @ w + r * r, 0.0))
        return s * d - w
    return control


def make_zermelo(T=1.3) -> ControlProblem:
    p = ControlProblem(
        name="zermelo", n=2, m=2, dynamics=_zermelo_f,
        X=Region.box([-1.0, -1.0], [1.0, 0.0]),
        U=Region.ball([0.0, 0.0], 1.0),
        K=Region.ball([0.0, 0.0], 0.05),
        T=T, x0=[0.0, -1.0],
        # |d flow/dx2| <= (1+T) pi / 2, |d flow/dt| <= 1/2, |df/du| = 1
        lip_f=0.5 * (1 + T) * np.pi,
        cf_bound=1.0 + 0.5 * (1 + T),
        hess_f=0.5 * (1 + T) * np.pi ** 2,
        affine=(_zermelo_drift, _identity_input(2)),
    )
    object.__setattr__(p, "heuristic", _pursuit_ball(p))
    return p


def windspeed(t):
    return 2.0 + t


def windangle(t):
    return 0.5 * np.pi * (1.0 - 0.4 * t)


def polar(u):
    return np.abs(np.sin(2.0 * np.asarray(u) / 3.0))


def _regatta_f(t, x, u):
    u = np.asarray(u, dtype=float)[..., 0]
    t = np.asarray(t, dtype=float)
    speed = windspeed(t) * polar(u)
    heading = u + windangle(t)
    return np.stack([speed * np.cos(heading), speed * np.sin(heading)], axis=-1)


def _regatta_heuristic(p):
    center = p.K.center

    def control(t, x):
        # sail straight at the target: heading angle = bearing to the center
        bearing = np.arctan2(center[1] - x[1], center[0] - x[0])
        u = (bearing - windangle(t) + np.pi) % (2 * np.pi) - np.pi
        return np.array([u])
    return control


def make_regatta(T=1.3) -> ControlProblem:
    ws = windspeed(T)
    p = ControlProblem(
        name="regatta", n=2, m=1, dynamics=_regatta_f,
        X=Region.box([-1.0, -1.0], [1.0, 1.0]),
        U=Region.box([-np.pi], [np.pi]),
        K=Region.ball([0.0, 0.0], 0.05),
        T=T, x0=[0.0, -1.0],
        # df/dt: |1| + ws * 0.2 pi ; df/du: ws * (2/3 + 1)
        lip_f=ws * (1.0 + 2.0 / 3.0) + 1.0 + 0.2 * np.pi * ws,
        cf_bound=ws,
        # d2f/dt2 <= 2 * 0.2 pi + ws * (0.2 pi)^2 ; f does not depend on x
        hess_f=2 * 0.2 * np.pi + ws * (0.2 * np.pi) ** 2,
    )
    object.__setattr__(p, "heuristic", _regatta_heuristic(p))
    return p


def brockett_q(x):
    x = np.asarray(x, dtype=float)
    return np.stack([
        2.0 / (2.0 + x[..., 3]),
        -x[..., 0],
        -np.cos(x[..., 0] * x[..., 2]),
        np.exp(x[..., 1]),
        x[..., 0] * x[..., 1] * x[..., 5],
    ], axis=-1)


def _brockett_f(t, x, u):
    u = np.asarray(u, dtype=float)
    q = brockett_q(x)
    return np.concatenate([u, np.sum(q * u, axis=-1, keepdims=True)], axis=-1)


def _brockett_drift(t, x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _brockett_input(t, x):
    q = brockett_q(x)
    eye = np.broadcast_to(np.eye(5), q.shape[:-1] + (5, 5))
    return np.concatenate([eye, q[..., None, :]], axis=-2)


def _brockett_heuristic(p):
    # first bring the coupled coordinate x6 within r/sqrt(2) of zero by moving
    # along q, then head straight for the origin in (x1..x5)
    band = p.K.radius / np.sqrt(2.0)

    def control(t, x):
        if abs(x[5]) > band:
            q = brockett_q(x)
            return -np.sign(x[5]) * q / np.linalg.norm(q)
        g = x[:5]
        return -g / np.linalg.norm(g)
    return control


def make_brockett(T=1.4) -> ControlProblem:
    # on [-1,1]^6: |q| <= (2, 1, 1, e, 1), |grad q| <= (2, 1, 1, e, sqrt(3))
    qmax = np.sqrt(4 + 1 + 1 + np.e ** 2 + 1)
    p = ControlProblem(
        name="brockett", n=6, m=5, dynamics=_brockett_f,
        X=Region.box(-np.ones(6), np.ones(6)),
        U=Region.ball(np.zeros(5), 1.0),
        K=Region.ball(np.zeros(6), 0.05),
        T=T, x0=0.5 * np.ones(6),
        lip_f=qmax + np.sqrt(4 + 1 + 1 + np.e ** 2 + 3),
        cf_bound=np.sqrt(1 + qmax ** 2),
        hess_f=np.e + 4.0,
        affine=(_brockett_drift, _brockett_input),
    )
    object.__setattr__(p, "heuristic", _brockett_heuristic(p))
    return p


def _line_f(t, x, u):
    return np.asarray(u, dtype=float) + 0.0 * np.asarray(x, dtype=float)


def _line_heuristic(p):
    def control(t, x):
        return np.array([-1.0])
    return control


def make_line1d(T=1.0) -> ControlProblem:
    p = ControlProblem(
        name="line1d", n=1, m=1, dynamics=_line_f,
        X=Region.box([0.0], [1.0]),
        U=Region.box([-1.0], [1.0]),
        K=Region.box([0.0], [0.05]),
        T=T, x0=[0.5],
        lip_f=1.0, cf_bound=1.0, hess_f=0.0,
        affine=(lambda t, x: np.zeros_like(np.asarray(x, dtype=float)), _identity_input(1)),
    )
    object.__setattr__(p, "heuristic", _line_heuristic(p))
    return p


def line1d_value(t, x):
    """Exact minimal time for :func:`make_line1d` (independent of ``t``)."""
    return max(float(x) - 0.05, 0.0)


PROBLEMS = {
    "zermelo": make_zermelo,
    "regatta": make_regatta,
    "brockett": make_brockett,
    "line1d": make_line1d,
}


def get_problem(name: str) -> ControlProblem:
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise ProblemError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None


def heuristic_trajectory(p: ControlProblem, dt=1e-3) -> Trajectory:
    """Integrate the problem's built-in heuristic controller until it reaches K."""
    from .feedback import integrate

    if p.heuristic is None:
        raise ProblemError(f"problem {p.name!r} has no heuristic controller")
    traj = integrate(p, p.heuristic, dt=dt, horizon=2 * p.T)
    if not traj.hit:
        raise ProblemError(f"heuristic for {p.name!r} did not reach K within {2 * p.T}")
    return traj
