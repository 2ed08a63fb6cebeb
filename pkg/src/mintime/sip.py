"""Linear semi-infinite program over polynomial HJB subsolutions.

A coefficient vector ``theta`` is feasible when every cut ``a . theta + b <= 0``
holds, where cuts come from two families:

* HJB cuts at ``(t, x, u)``: ``a = -dPhi/dt - grad_x Phi . f(t, x, u)``, ``b = -1``;
* terminal cuts at ``(t, x)`` with ``x`` in ``K``: ``a = Phi(t, x)``, ``b = 0``.

:func:`cutting_plane` maximizes ``c . theta - mu/2 |theta|^2`` with
``c = Phi(0, x0)`` by alternating a master QP over finitely many cuts with a
separation oracle.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .feedback import ControllerConfig, simulate
from .polybasis import PolyBasis, Theta
from .problem import ControlProblem, Trajectory, heuristic_trajectory
from .qp import MasterQP, QPError

log = logging.getLogger(__name__)

_DOMAIN_TOL = 1e-9


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class Cut:
    a: np.ndarray
    b: float
    kind: str                  # "hjb" or "terminal"
    t: float
    x: tuple
    u: Optional[tuple] = None

    @property
    def key(self):
        pt = (self.t, *self.x, *(self.u or ()))
        return (self.kind,) + tuple(round(v, 9) for v in pt)


def _check_time(p, t):
    if not (-_DOMAIN_TOL <= t <= p.T + _DOMAIN_TOL):
        raise DomainError(f"t={t} outside [0, {p.T}]")


def hjb_cut(basis: PolyBasis, p: ControlProblem, t, x, u) -> Cut:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    _check_time(p, t)
    if not p.X.contains(x, tol=_DOMAIN_TOL):
        raise DomainError(f"x={x.tolist()} outside X")
    if not p.U.contains(u, tol=_DOMAIN_TOL):
        raise DomainError(f"u={u.tolist()} outside U")
    jac = basis.jacobian(t, x)
    f = p.f(t, x, u)
    a = -jac[:, 0] - jac[:, 1:] @ f
    return Cut(a, -1.0, "hjb", float(t), tuple(x.tolist()), tuple(u.tolist()))


def terminal_cut(basis: PolyBasis, p: ControlProblem, t, x) -> Cut:
    x = np.asarray(x, dtype=float)
    _check_time(p, t)
    if not p.K.contains(x, tol=_DOMAIN_TOL):
        raise DomainError(f"x={x.tolist()} outside K")
    return Cut(basis.eval(t, x), 0.0, "terminal", float(t), tuple(x.tolist()))


def cut_value(cut: Cut, theta: Theta) -> float:
    """``a . theta + b``; positive means violated."""
    return float(cut.a @ theta.coeffs + cut.b)


class CutSet:
    """Append-only cut collection, deduplicated by generating point."""

    def __init__(self, cuts=()):
        self.cuts: list[Cut] = []
        self._keys = set()
        for c in cuts:
            self.add(c)

    def add(self, cut: Cut) -> bool:
        k = cut.key
        if k in self._keys:
            return False
        self._keys.add(k)
        self.cuts.append(cut)
        return True

    def extend(self, cuts) -> list:
        return [c for c in cuts if self.add(c)]

    def __len__(self):
        return len(self.cuts)

    def __iter__(self):
        return iter(self.cuts)

    def matrix(self):
        if not self.cuts:
            return np.zeros((0, 0)), np.zeros(0)
        return np.array([c.a for c in self.cuts]), np.array([c.b for c in self.cuts])


def hat_theta(basis: PolyBasis, T: float) -> Theta:
    """Coefficients of ``t - 1 - T``: strictly feasible, every HJB cut equals -2 there."""
    coeffs = np.zeros(basis.dim)
    coeffs[0] = -1.0 - T
    coeffs[basis.index_of([1] + [0] * basis.n_states)] = 1.0
    return Theta(basis, coeffs)


def master_solve(cuts: CutSet, c, mu: float):
    """Maximize ``c.theta - mu/2 |theta|^2`` subject to the cuts.

    Returns ``(theta_coeffs, master_value)``.
    """
    qp = MasterQP(c, mu)
    if len(cuts):
        A, b = cuts.matrix()
        qp.add_rows(A, b)
    theta = qp.solve()
    return theta, qp.value()


def repair(theta: Theta, eta: float, hat: Theta) -> Theta:
    """Shift by ``eta * (t - 1 - T)``; feasible whenever the violation is at most ``eta``."""
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    return Theta(theta.basis, theta.coeffs + eta * hat.coeffs)


def certified_lower_bound(phi_hat: float, T: float, value_at_start: float) -> float:
    return value_at_start - max(phi_hat, 0.0) * (1.0 + T)


@dataclass
class IterationLog:
    iteration: int
    master_value: float
    max_violation: float
    cuts_added: int
    n_cuts: int
    t_hit: Optional[float]
    seconds: float


@dataclass
class SolveReport:
    theta: Theta
    theta_repaired: Theta
    estimated_value: float
    repaired_value: float
    final_violation: float
    iterations: int
    cuts_total: int
    terminated: bool
    mu: float
    epsilon: float
    seed: Optional[int]
    best_time: Optional[float]
    heuristic_time: Optional[float]
    n_seed_terminal: int
    seconds: float
    log: list = field(default_factory=list)
    kkt: dict = field(default_factory=dict)


def seed_cuts(p: ControlProblem, basis: PolyBasis, traj: Trajectory, rng,
              n_terminal=32) -> CutSet:
    """HJB cuts at the nodes of a trajectory plus terminal cuts sampled on [0,T] x K."""
    cuts = CutSet()
    cuts.extend(trajectory_cuts(p, basis, traj, stride=1))
    ts = rng.random(n_terminal) * p.T
    xs = p.K.sample(rng, n_terminal)
    for t, x in zip(ts, xs):
        cuts.add(terminal_cut(basis, p, t, x))
    return cuts


def trajectory_cuts(p, basis, traj, stride=1):
    out = []
    for k in range(0, len(traj.controls), stride):
        t = traj.times[k]
        if t > p.T:
            break
        out.append(hjb_cut(basis, p, t, traj.states[k], traj.controls[k]))
    return out


def cutting_plane(p: ControlProblem, basis: PolyBasis, mu: float, epsilon: float,
                  oracle: Callable, seeds: CutSet, max_iter: int = 200,
                  controller: Optional[ControllerConfig] = None,
                  simulate_every: Optional[int] = None, traj_stride: int = 10,
                  best_time: Optional[float] = None, seed: Optional[int] = None,
                  heuristic_time: Optional[float] = None,
                  n_seed_terminal: int = 0) -> SolveReport:
    """Cutting-plane loop for the regularized semi-infinite program.

    ``oracle(theta)`` returns an :class:`~mintime.oracle.OracleBatch` whose
    ``cuts`` are the most violated constraints found.  Iteration stops once the
    largest violation reported is at most ``epsilon``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    start = time.perf_counter()
    controller = controller or ControllerConfig()
    if simulate_every is None:
        simulate_every = 1 if basis.degree <= 4 else 5
    c = basis.eval(0.0, p.x0)
    hat = hat_theta(basis, p.T)
    cuts = CutSet(seeds)
    qp = MasterQP(c, mu)
    if len(cuts):
        qp.add_rows(*cuts.matrix())
    history = []
    terminated = False
    batch = None
    theta = None
    for k in range(max_iter):
        t0 = time.perf_counter()
        try:
            coeffs = qp.solve()
        except QPError as exc:
            raise QPError(f"master QP failed at iteration {k}: {exc}", best=exc.best) from exc
        theta = Theta(basis, coeffs)
        batch = oracle(theta)
        t_hit = None
        new = []
        if k % simulate_every == 0 and simulate_every > 0:
            traj = simulate(theta, p, basis, controller)
            if traj.hit:
                t_hit = traj.t_hit
                if best_time is None or t_hit < best_time:
                    best_time = t_hit
            if batch.max_violation > epsilon:
                new += cuts.extend(trajectory_cuts(p, basis, traj, stride=traj_stride))
        if batch.max_violation <= epsilon:
            terminated = True
        else:
            new += cuts.extend([cut for cut, v in zip(batch.cuts, batch.violations) if v > 0])
        history.append(IterationLog(k, qp.value(), batch.max_violation, len(new), len(cuts),
                                    t_hit, time.perf_counter() - t0))
        log.info("iter %d  master=%.6f  maxviol=%.3e  cuts=%d  t_hit=%s",
                 k, qp.value(), batch.max_violation, len(cuts), t_hit)
        if terminated:
            break
        if new:
            qp.add_rows(np.array([cut.a for cut in new]), np.array([cut.b for cut in new]))
    final_violation = batch.max_violation
    repaired = repair(theta, max(final_violation, 0.0), hat)
    return SolveReport(
        theta=theta,
        theta_repaired=repaired,
        estimated_value=float(c @ theta.coeffs),
        repaired_value=float(c @ repaired.coeffs),
        final_violation=float(final_violation),
        iterations=len(history),
        cuts_total=len(cuts),
        terminated=terminated,
        mu=mu, epsilon=epsilon, seed=seed,
        best_time=best_time,
        heuristic_time=heuristic_time,
        n_seed_terminal=n_seed_terminal,
        seconds=time.perf_counter() - start,
        log=history,
        kkt=qp.kkt_residuals(),
    )


def solve(p: ControlProblem, degree: int, mu=1e-5, epsilon=1e-3, n_samples=500_000,
          top_k=100, seed=0, max_iter=200, controller=None, n_terminal=32,
          oracle_kwargs=None) -> SolveReport:
    """Heuristic seeding followed by :func:`cutting_plane` with the sampling oracle."""
    from .oracle import sample_oracle

    rng = np.random.default_rng(seed)
    basis = PolyBasis(p.n, degree)
    controller = controller or ControllerConfig()
    heur = heuristic_trajectory(p, dt=controller.dt)
    seeds = seed_cuts(p, basis, heur, rng, n_terminal=n_terminal)
    kwargs = dict(oracle_kwargs or {})

    def oracle(theta):
        return sample_oracle(theta, p, basis, n_samples, top_k, rng, **kwargs)

    return cutting_plane(p, basis, mu, epsilon, oracle, seeds, max_iter=max_iter,
                         controller=controller, best_time=heur.t_hit, seed=seed,
                         heuristic_time=heur.t_hit, n_seed_terminal=n_terminal)
