"""Closed-loop control from an approximate value function.

The controller picks ``u`` minimizing ``grad_x V(t, x) . f(t, x, u)`` over
``U``; trajectories are integrated with fixed-step RK4 holding the control
constant over each step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .polybasis import PolyBasis, Theta, value_and_grad
from .problem import ControlProblem, Trajectory


@dataclass(frozen=True)
class ControllerConfig:
    u_grid: int = 720
    dt: float = 1e-3
    tie_tol: float = 1e-9
    boundary_mode: str = "filter"

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.u_grid < 2:
            raise ValueError("u_grid must be at least 2")
        if self.boundary_mode not in ("filter", "project"):
            raise ValueError("boundary_mode must be 'filter' or 'project'")


def control_candidates(U, count):
    """Deterministic finite subset of ``U`` used when no closed form applies."""
    if U.kind == "box":
        if U.dim == 1:
            return np.linspace(U.lo[0], U.hi[0], count)[:, None]
        per = max(2, int(round(count ** (1.0 / U.dim))))
        axes = [np.linspace(lo, hi, per) for lo, hi in zip(U.lo, U.hi)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, U.dim)
    if U.dim == 1:
        return np.linspace(U.center[0] - U.radius, U.center[0] + U.radius, count)[:, None]
    if U.dim == 2:
        ang = np.linspace(0.0, 2 * np.pi, count, endpoint=False)
        ring = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        pts = np.vstack([np.zeros((1, 2)), ring * 0.5, ring])
        return U.center + U.radius * pts
    m = int(np.ceil(np.log2(max(count, 2))))
    dirs = qmc.Sobol(U.dim, scramble=False).random_base2(m)[:count]
    dirs = dirs * 2.0 - 1.0
    norms = np.linalg.norm(dirs, axis=1)
    dirs = dirs[norms > 1e-12] / norms[norms > 1e-12, None]
    return U.center + U.radius * np.vstack([np.zeros((1, U.dim)), dirs])


def _closed_form(p: ControlProblem, t, x, gx, tie_tol):
    drift, input_matrix = p.affine
    w = np.asarray(input_matrix(t, x)).T @ gx
    U = p.U
    if U.kind == "ball":
        nw = np.linalg.norm(w)
        if nw <= tie_tol:
            return U.center.copy(), w
        return U.center - U.radius * w / nw, w
    u = np.where(w > tie_tol, U.lo, np.where(w < -tie_tol, U.hi, np.clip(0.0, U.lo, U.hi)))
    return u, w


def argmin_control(theta: Theta, p: ControlProblem, basis: PolyBasis, t, x,
                   cfg: ControllerConfig = ControllerConfig()):
    """A minimizer of ``grad_x V . f(t, x, u)`` over ``U``.

    Control-affine problems with a ball or box ``U`` use the closed form;
    otherwise a fixed candidate grid is scanned.  With ``boundary_mode='filter'``,
    among candidates within ``tie_tol`` of the minimum those whose Euler step
    stays in ``X`` are preferred, then the smallest norm.
    """
    x = np.asarray(x, dtype=float)
    _, _, gx = value_and_grad(theta, t, x)
    return _argmin_from_grad(p, t, x, gx, cfg)


def _argmin_from_grad(p, t, x, gx, cfg):
    if p.affine is not None and p.U.kind in ("ball", "box"):
        u, _ = _closed_form(p, t, x, gx, cfg.tie_tol)
        if cfg.boundary_mode != "filter" or p.X.contains(x + cfg.dt * p.f(t, x, u)):
            return u
    cand = control_candidates(p.U, cfg.u_grid)
    if p.affine is not None and p.U.kind in ("ball", "box"):
        cand = np.vstack([u[None, :], cand])
    vel = p.f(t, np.broadcast_to(x, (len(cand), p.n)), cand)
    g = vel @ gx
    gmin = g.min()
    tied = g <= gmin + cfg.tie_tol
    if cfg.boundary_mode == "filter":
        inside = p.X.contains(x + cfg.dt * vel)
        if np.any(tied & inside):
            tied = tied & inside
    idx = np.flatnonzero(tied)
    norms = np.linalg.norm(cand[idx] - (p.U.center if p.U.kind == "ball" else 0.0), axis=1)
    return cand[idx[np.argmin(norms)]].copy()


def rk4_step(p: ControlProblem, t, x, u, dt):
    k1 = p.f(t, x, u)
    k2 = p.f(t + 0.5 * dt, x + 0.5 * dt * k1, u)
    k3 = p.f(t + 0.5 * dt, x + 0.5 * dt * k2, u)
    k4 = p.f(t + dt, x + dt * k3, u)
    return x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(p: ControlProblem, controller, dt=1e-3, horizon=None):
    """Integrate ``x' = f(t, x, controller(t, x))`` from ``x0`` until ``K`` or ``horizon``.

    States leaving ``X`` are projected back.  The hitting time is linearly
    interpolated inside the crossing step.
    """
    horizon = p.T if horizon is None else horizon
    n_steps = int(np.ceil(horizon / dt - 1e-9))
    x = p.x0.copy()
    times, states, controls = [0.0], [x.copy()], []
    if p.K.contains(x):
        return Trajectory(dt, np.array(times), np.array(states), np.zeros((0, p.m)), True, 0.0)
    d_prev = p.K.signed_distance(x)
    for k in range(n_steps):
        t = k * dt
        u = np.asarray(controller(t, x), dtype=float)
        x_new = rk4_step(p, t, x, u, dt)
        if not np.all(np.isfinite(x_new)):
            raise FloatingPointError(
                f"non-finite state at step {k}: t={t}, x={x.tolist()}, u={u.tolist()}")
        if not p.X.contains(x_new):
            x_new = p.X.project(x_new)
        x = x_new
        controls.append(u)
        times.append((k + 1) * dt)
        states.append(x.copy())
        if p.K.contains(x):
            d_new = p.K.signed_distance(x)
            frac = d_prev / (d_prev - d_new) if d_prev > d_new else 1.0
            t_hit = t + dt * min(max(frac, 0.0), 1.0)
            return Trajectory(dt, np.array(times), np.array(states), np.array(controls), True, t_hit)
        d_prev = p.K.signed_distance(x)
    return Trajectory(dt, np.array(times), np.array(states),
                      np.array(controls).reshape(-1, p.m), False, None)


def simulate(theta: Theta, p: ControlProblem, basis: PolyBasis,
             cfg: ControllerConfig = ControllerConfig()) -> Trajectory:
    """Closed-loop trajectory of the argmin controller, recomputed every step."""
    def controller(t, x):
        _, grad = theta.value_grad_many(np.concatenate([[t], x])[None, :])
        return _argmin_from_grad(p, t, x, grad[0, 1:], cfg)

    return integrate(p, controller, dt=cfg.dt, horizon=p.T)


def performance_gap(traj: Trajectory, lb: float):
    """Relative gap ``(t_hit - lb) / lb``; ``None`` if the trajectory missed ``K``."""
    if not traj.hit or traj.t_hit is None or lb <= 0:
        return None
    return (traj.t_hit - lb) / lb
