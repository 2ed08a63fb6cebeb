"""Dual active-set solver for the regularized master problem.

Solves ``max c.theta - mu/2 |theta|^2  s.t.  A theta + b <= 0`` with the
Goldfarb-Idnani method specialized to the Hessian ``mu * I``.  The iterate is
dual feasible throughout, so a solved instance stays a valid starting point
when rows are appended; :class:`MasterQP` exploits this to warm-start the
cutting-plane loop.

Nearly parallel cuts can make the active-set walk crawl.  When it exceeds a
step budget, a primal-dual interior-point solve locates the optimal face and
the active-set iteration restarts from that face to finish exactly.
"""
from __future__ import annotations

import logging

import numpy as np
from scipy.linalg import solve_triangular


class QPError(RuntimeError):
    """Raised when the active-set iteration does not converge.

    ``best`` holds the last primal iterate.
    """

    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


log = logging.getLogger(__name__)


class _BudgetExceeded(Exception):
    pass


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


class MasterQP:
    """Incremental master problem.

    Parameters
    ----------
    c : array_like
        Linear objective vector.
    mu : float
        Regularization weight, must be positive.
    feas_tol : float
        Primal feasibility tolerance on ``A theta + b`` for the rows as given.
    """

    def __init__(self, c, mu, feas_tol=5e-10, max_steps=None, step_budget=None):
        if mu <= 0:
            raise ValueError("mu must be positive")
        self.c = np.asarray(c, dtype=float).copy()
        self.mu = float(mu)
        self.feas_tol = feas_tol
        self.max_steps = max_steps
        self.step_budget = step_budget
        self.used_ipm = False
        n = self.c.shape[0]
        self.A = np.zeros((0, n))
        self.b = np.zeros(0)
        self.scale = np.zeros(0)
        self.active: list[int] = []
        self.lam = np.zeros(0)
        self.theta = self.c / self.mu
        self.steps = 0
        self._lam_full = None
        self._theta_ipm = None

    @property
    def n(self):
        return self.c.shape[0]

    def add_rows(self, A, b):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        if A.shape[1] != self.n or A.shape[0] != b.shape[0]:
            raise ValueError("cut dimensions do not match the master problem")
        # rows are stored normalized; the feasible set is unchanged
        scale = np.linalg.norm(A, axis=1)
        scale[scale == 0] = 1.0
        self.scale = np.concatenate([self.scale, scale])
        self.A = np.vstack([self.A, A / scale[:, None]])
        self.b = np.concatenate([self.b, b / scale])

    # -- linear algebra on the active set ---------------------------------
    def _factor(self, act):
        if not act:
            return None, None
        Q, R = np.linalg.qr(self.A[act].T)
        return Q, R

    def _vertex(self, act):
        """Primal/dual point with all rows of ``act`` tight."""
        Q, R = self._factor(act)
        if Q is None:
            return self.c / self.mu, np.zeros(0)
        h = -self.b[act]
        y = np.linalg.solve(R.T, h)
        Qc = Q.T @ self.c
        resid = self.c - Q @ Qc
        resid -= Q @ (Q.T @ resid)
        theta = Q @ y + resid / self.mu
        lam = np.linalg.solve(R, Qc - self.mu * y)
        return theta, lam

    # -- main iteration ----------------------------------------------------
    def solve(self):
        """Solve to optimality, warm-starting from the previous active set.

        Returns ``theta``.
        """
        self.steps = 0
        self.used_ipm = False
        self._lam_full = None
        budget = self.step_budget or 4 * self.n + 200
        try:
            state = self._active_set(self.theta, list(self.active), self.lam.copy(), budget,
                                     on_cap=_BudgetExceeded)
        except _BudgetExceeded:
            self.used_ipm = True
            theta_ipm, lam_ipm = self._interior_point()
            state, exact = self._polish(theta_ipm, lam_ipm)
            if not exact:
                # the face vertex stays the warm start; the answer is the interior point
                self.active, self.lam = state[1], state[2]
                self.theta = state[0]
                self._lam_full = lam_ipm
                self._theta_ipm = theta_ipm
                return theta_ipm
        self.theta, self.active, self.lam = state
        return self.theta

    def _polish(self, theta_ipm, lam_ipm, rounds=None):
        """Exact vertex on the optimal face, or ``(face_start, False)`` if not found."""
        theta, act, lam = self._face_start(theta_ipm, lam_ipm)
        rounds = rounds or self.n
        for _ in range(rounds):
            p = self._most_violated(theta, act)
            if p < 0:
                return (theta, act, lam), True
            if len(act) >= self.n:
                break
            trial = act + [p]
            Q, R = self._factor(trial)
            if abs(R[-1, -1]) <= 1e-10:
                break
            theta_t, lam_t = self._vertex(trial)
            while len(trial) and lam_t.min() < 0:
                del trial[int(np.argmin(lam_t))]
                theta_t, lam_t = self._vertex(trial)
            if p not in trial:
                break
            theta, act, lam = theta_t, trial, np.maximum(lam_t, 0.0)
        return (theta, act, lam), False

    def _most_violated(self, theta, act):
        """Row of largest normalized violation among those violated beyond
        ``feas_tol`` in original units; -1 if none."""
        if not self.A.shape[0]:
            return -1
        slack = self.A @ theta + self.b
        slack[act] = -np.inf
        slack[slack * self.scale <= self.feas_tol] = -np.inf
        p = int(np.argmax(slack))
        return p if np.isfinite(slack[p]) else -1

    def _active_set(self, theta, act, lam, max_steps, on_cap=None):
        A, b, mu = self.A, self.b, self.mu
        while A.shape[0]:
            p = self._most_violated(theta, act)
            if p < 0:
                break
            a_p = A[p]
            lam_p = 0.0
            while True:
                self.steps += 1
                if self.steps > max_steps:
                    if on_cap is not None:
                        raise on_cap
                    raise QPError("master QP exceeded its step cap", best=theta)
                Q, R = self._factor(act)
                if Q is None:
                    z = a_p / mu
                    r = np.zeros(0)
                else:
                    qa = Q.T @ a_p
                    z = (a_p - Q @ qa) / mu
                    r = np.linalg.solve(R, qa)
                # dual step limit
                t1, k = np.inf, -1
                for j in range(len(act)):
                    if r[j] > 0:
                        ratio = lam[j] / r[j]
                        if ratio < t1:
                            t1, k = ratio, j
                za = z @ a_p
                viol = a_p @ theta + b[p]
                dependent = np.linalg.norm(z) * mu <= 1e-12 * max(1.0, np.linalg.norm(a_p))
                t2 = np.inf if dependent else viol / za
                if not np.isfinite(t1) and not np.isfinite(t2):
                    raise QPError("master QP is infeasible", best=theta)
                if dependent:
                    lam = lam - t1 * r
                    lam_p += t1
                    del act[k]
                    lam = np.delete(lam, k)
                    continue
                t = min(t1, t2)
                theta = theta - t * z
                lam = lam - t * r
                lam_p += t
                if t2 <= t1:
                    act.append(p)
                    lam = np.append(lam, lam_p)
                    theta, lam_exact = self._vertex(act)
                    # keep the recomputed multipliers, clipping rounding noise
                    lam = np.maximum(lam_exact, 0.0)
                    break
                del act[k]
                lam = np.delete(lam, k)
        return theta, act, lam

    # -- interior-point phase ----------------------------------------------
    def _interior_point(self, tol=1e-11, max_iter=100, patience=6):
        """Mehrotra predictor-corrector on ``A theta + s = -b, s >= 0``.

        Returns the iterate with the smallest scaled KKT residual; the normal
        equations lose accuracy near the end, so the last one need not be best.
        """
        A, h, mu, c = self.A, -self.b, self.mu, self.c
        m, n = A.shape
        theta = np.zeros(n)
        s = np.maximum(h - A @ theta, 1.0)
        lam = np.ones(m)
        scale = 1.0 + max(np.abs(c).max(), np.abs(h).max())
        best, best_merit, stale = (theta.copy(), lam.copy()), np.inf, 0
        for _ in range(max_iter):
            rd = mu * theta - c + A.T @ lam
            rp = A @ theta + s - h
            gap = s @ lam / m
            merit = max(np.abs(rd).max() / scale, np.abs(rp).max() / scale, gap)
            if merit < best_merit:
                best, best_merit, stale = (theta.copy(), lam.copy()), merit, 0
            else:
                stale += 1
            log.debug("ipm %d merit=%.3e gap=%.3e", _, merit, gap)
            if merit <= tol or stale >= patience:
                break
            d = lam / s
            # R^T R = mu I + A^T D A, factored without forming the product
            R = np.linalg.qr(np.vstack([A * np.sqrt(d)[:, None], np.sqrt(mu) * np.eye(n)]),
                             mode="r")

            def solve_m(v):
                return solve_triangular(R, solve_triangular(R, v, trans="T"))

            def newton(r1, r2, r3):
                dth = solve_m(-r1 - A.T @ (d * r2 - r3 / s))
                dlam = d * (A @ dth + r2) - r3 / s
                ds = -(r3 + s * dlam) / lam
                return dth, ds, dlam

            def direction(rc):
                # one round of refinement on the unreduced system
                dth, ds, dlam = newton(rd, rp, rc)
                e1 = rd + mu * dth + A.T @ dlam
                e2 = rp + A @ dth + ds
                e3 = rc + lam * ds + s * dlam
                cth, cs, clam = newton(e1, e2, e3)
                return dth + cth, ds + cs, dlam + clam

            _, ds_a, dl_a = direction(s * lam)
            alpha_a = min(_max_step(s, ds_a), _max_step(lam, dl_a))
            gap_a = (s + alpha_a * ds_a) @ (lam + alpha_a * dl_a) / m
            sigma = (gap_a / gap) ** 3 if gap > 0 else 0.0
            dth, ds, dlam = direction(s * lam + ds_a * dl_a - sigma * gap)
            alpha = min(0.99 * min(_max_step(s, ds), _max_step(lam, dlam)), 1.0)
            theta += alpha * dth
            s += alpha * ds
            lam += alpha * dlam
        return best

    def _face_start(self, theta_ipm, lam_ipm):
        """Dual-feasible active-set start on the face identified by the interior point."""
        slack = -(self.A @ theta_ipm + self.b)
        order = np.argsort(-lam_ipm)
        order = order[lam_ipm[order] > np.maximum(slack[order], 0.0)]
        act: list[int] = []
        basis = np.zeros((self.n, 0))
        for i in order:
            if len(act) == self.n:
                break
            a = self.A[i]
            r = a - basis @ (basis.T @ a)
            r -= basis @ (basis.T @ r)
            nr = np.linalg.norm(r)
            if nr > 1e-13:
                act.append(int(i))
                basis = np.column_stack([basis, r / nr])
        while True:
            theta, lam = self._vertex(act)
            if not act or lam.min() >= 0:
                break
            del act[int(np.argmin(lam))]
        return theta, act, np.maximum(lam, 0.0)

    def solution(self):
        return self._theta_ipm if self._lam_full is not None else self.theta

    def multipliers(self):
        """Full multiplier vector over all rows, for the rows as given."""
        if self._lam_full is not None:
            return self._lam_full / self.scale
        full = np.zeros(self.A.shape[0])
        full[self.active] = self.lam
        return full / self.scale

    def value(self):
        theta = self.solution()
        return float(self.c @ theta - 0.5 * self.mu * theta @ theta)

    def kkt_residuals(self):
        """Return ``(stationarity, primal, complementarity, dual)`` residuals."""
        lam = self.multipliers()
        theta = self.solution()
        A = self.A * self.scale[:, None]
        b = self.b * self.scale
        stat = self.c - self.mu * theta - A.T @ lam
        slack = A @ theta + b if A.shape[0] else np.zeros(0)
        return {
            "stationarity": float(np.max(np.abs(stat))) if stat.size else 0.0,
            "primal": float(max(0.0, slack.max())) if slack.size else 0.0,
            "complementarity": float(np.max(np.abs(lam * slack))) if slack.size else 0.0,
            "dual": float(max(0.0, -lam.min())) if lam.size else 0.0,
        }


def solve_qp(A, b, c, mu, **kwargs):
    """One-shot solve; returns ``(theta, multipliers, value)``."""
    qp = MasterQP(c, mu, **kwargs)
    if len(b):
        qp.add_rows(A, b)
    theta = qp.solve()
    return theta, qp.multipliers(), qp.value()
