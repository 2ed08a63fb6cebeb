"""Separation oracles: a sampling oracle for the solve loop and a grid certifier.

The violation of ``V = theta . Phi`` at an HJB point ``(t, x, u)`` is
``-(dV/dt + 1 + grad_x V . f(t, x, u))`` and at a terminal point ``(t, x)``
it is ``V(t, x)``; ``theta`` is feasible when no violation is positive.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .polybasis import BoxBound, PolyBasis, Theta, derivative_coeffs
from .problem import ControlProblem
from .sip import Cut, hjb_cut, terminal_cut


@dataclass
class OraclePoint:
    kind: str
    t: float
    x: np.ndarray
    u: np.ndarray = None


@dataclass
class OracleBatch:
    points: list
    violations: np.ndarray
    max_violation: float
    samples_used: int
    cuts: list = field(default_factory=list)


def hjb_violations(theta: Theta, p: ControlProblem, t, x, u):
    """Vectorized HJB violations at rows of ``t (P,)``, ``x (P, n)``, ``u (P, m)``."""
    pts = np.column_stack([t, x])
    _, grad = theta.value_grad_many(pts)
    f = p.f(t, x, u)
    return -(grad[:, 0] + 1.0 + np.einsum("ij,ij->i", grad[:, 1:], f))


def terminal_violations(theta: Theta, t, x):
    return theta.value_many(np.column_stack([t, x]))


def violation_at(theta: Theta, p: ControlProblem, basis: PolyBasis, point) -> float:
    """Violation at an :class:`OraclePoint` (or a ``(kind, t, x[, u])`` tuple)."""
    if not isinstance(point, OraclePoint):
        point = OraclePoint(*point)
    if point.kind == "hjb":
        cut = hjb_cut(basis, p, point.t, point.x, point.u)
    else:
        cut = terminal_cut(basis, p, point.t, point.x)
    return float(cut.a @ theta.coeffs + cut.b)


def sample_hjb_points(p: ControlProblem, n, rng):
    t = rng.random(n) * p.T
    x = p.X.sample(rng, n)
    u = p.U.sample(rng, n)
    return t, x, u


def sample_terminal_points(p: ControlProblem, n, rng):
    return rng.random(n) * p.T, p.K.sample(rng, n)


def worst_controls(theta: Theta, p: ControlProblem, t, x):
    """Per-point control maximizing the HJB violation, for control-affine problems
    with a ball or box ``U``."""
    _, grad = theta.value_grad_many(np.column_stack([t, x]))
    _, input_matrix = p.affine
    w = np.einsum("pij,pi->pj", np.asarray(input_matrix(t, x)), grad[:, 1:])
    U = p.U
    if U.kind == "ball":
        nw = np.linalg.norm(w, axis=1, keepdims=True)
        safe = np.where(nw > 0, nw, 1.0)
        return U.center - U.radius * np.where(nw > 0, w / safe, 0.0)
    return np.where(w > 0, U.lo, np.where(w < 0, U.hi, 0.5 * (U.lo + U.hi)))


def has_closed_form(p: ControlProblem) -> bool:
    return p.affine is not None and p.U.kind in ("ball", "box")


def sample_oracle(theta: Theta, p: ControlProblem, basis: PolyBasis, n_samples=500_000,
                  top_k=100, rng=None, rho=0.9, chunk=100_000,
                  worst_control=None) -> OracleBatch:
    """Monte-Carlo separation: evaluate random points and keep the ``top_k`` worst.

    A fraction ``rho`` of the samples is drawn uniformly from ``[0,T] x X x U``
    and the rest from ``[0,T] x K``.  With ``worst_control`` (the default when
    the dynamics are control-affine and ``U`` is a ball or box) the sampled
    control at each ``(t, x)`` is replaced by the exact maximizer of the
    violation over ``U``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    if worst_control is None:
        worst_control = has_closed_form(p)
    elif worst_control and not has_closed_form(p):
        raise ValueError("worst_control needs control-affine dynamics with a ball or box U")
    rng = np.random.default_rng() if rng is None else rng
    n_hjb = int(round(rho * n_samples))
    n_term = n_samples - n_hjb
    best_v = np.empty(0)
    best_pts: list = []
    done = 0
    while done < n_hjb:
        k = min(chunk, n_hjb - done)
        t, x, u = sample_hjb_points(p, k, rng)
        if worst_control:
            u = worst_controls(theta, p, t, x)
        v = hjb_violations(theta, p, t, x, u)
        keep = np.argsort(-v, kind="stable")[:top_k]
        best_v = np.concatenate([best_v, v[keep]])
        best_pts += [OraclePoint("hjb", float(t[i]), x[i].copy(), u[i].copy()) for i in keep]
        done += k
    if n_term:
        t, x = sample_terminal_points(p, n_term, rng)
        v = terminal_violations(theta, t, x)
        keep = np.argsort(-v, kind="stable")[:top_k]
        best_v = np.concatenate([best_v, v[keep]])
        best_pts += [OraclePoint("terminal", float(t[i]), x[i].copy()) for i in keep]
    order = np.argsort(-best_v, kind="stable")[:top_k]
    points = [best_pts[i] for i in order]
    viols = best_v[order]
    cuts = [_cut_of(basis, p, pt) for pt in points]
    return OracleBatch(points, viols, float(viols[0]), n_samples, cuts)


def _cut_of(basis, p, pt: OraclePoint) -> Cut:
    if pt.kind == "hjb":
        return hjb_cut(basis, p, pt.t, pt.x, pt.u)
    return terminal_cut(basis, p, pt.t, pt.x)


# ---------------------------------------------------------------------------
# grid certification
# ---------------------------------------------------------------------------

class CertificationError(RuntimeError):
    """Raised when a certification grid would exceed the evaluation cap."""


@dataclass
class CertResult:
    """Sound upper bound ``phi_hat = grid_max + padding`` on the feasibility error."""

    phi_hat: float
    grid_max: float
    padding: float
    spacing: tuple
    evaluations: int
    hjb_phi: float = float("nan")
    terminal_phi: float = float("nan")
    order: int = 2
    u_spacing: Optional[tuple] = None
    seconds: float = 0.0

    def to_dict(self):
        return {
            "phi_hat": self.phi_hat, "grid_max": self.grid_max, "padding": self.padding,
            "spacing": list(self.spacing), "evaluations": self.evaluations,
            "hjb_phi": self.hjb_phi, "terminal_phi": self.terminal_phi, "order": self.order,
            "u_spacing": None if self.u_spacing is None else list(self.u_spacing),
            "seconds": self.seconds,
        }


@dataclass
class _Grid:
    """Regular grid on a box, partitioned into blocks of whole cells."""

    lo: np.ndarray
    hi: np.ndarray
    blocks: np.ndarray       # per dimension
    cells: np.ndarray        # cells per block, per dimension

    @classmethod
    def build(cls, lo, hi, spacing, block_width):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        length = hi - lo
        spacing = np.broadcast_to(np.asarray(spacing, dtype=float), lo.shape)
        width = np.broadcast_to(np.asarray(block_width, dtype=float), lo.shape)
        if np.any(spacing <= 0):
            raise ValueError("grid spacing must be positive")
        nb = np.maximum(1, np.minimum(np.ceil(length / width - 1e-9),
                                      np.ceil(length / spacing - 1e-9))).astype(int)
        cells = np.maximum(1, np.ceil(length / (nb * spacing) - 1e-9)).astype(int)
        return cls(lo, hi, nb, cells)

    @property
    def h(self):
        return (self.hi - self.lo) / (self.blocks * self.cells)

    @property
    def nodes(self):
        return self.blocks * self.cells + 1

    def axis(self, i):
        return np.linspace(self.lo[i], self.hi[i], self.nodes[i])

    def block_boxes(self):
        """Centers and half-widths of all blocks, in C order of the block index."""
        bw = (self.hi - self.lo) / self.blocks
        axes = [self.lo[i] + bw[i] * (np.arange(self.blocks[i]) + 0.5) for i in range(len(self.lo))]
        centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(self.lo))
        return centers, np.broadcast_to(bw / 2, centers.shape)


def _block_max(G, cells):
    """Max over every block's nodes, boundary nodes included in both neighbours."""
    for ax, c in enumerate(cells):
        n = G.shape[ax] - 1
        nb = n // c
        inner = np.take(G, np.arange(n), axis=ax)
        m = inner.reshape(inner.shape[:ax] + (nb, c) + inner.shape[ax + 1:]).max(axis=ax + 1)
        G = np.maximum(m, np.take(G, np.arange(c, n + 1, c), axis=ax))
    return G


def _hjb_node_bound(theta, p, pts, u_nodes, u_diam, chunk):
    """Upper bound on ``max_u`` HJB violation at each row of ``pts``."""
    out = np.empty(pts.shape[0])
    for s in range(0, pts.shape[0], chunk):
        y = pts[s:s + chunk]
        t, x = y[:, 0], y[:, 1:]
        _, grad = theta.value_grad_many(y)
        gt, gx = grad[:, 0], grad[:, 1:]
        base = -gt - 1.0
        if u_nodes is None:
            drift, input_matrix = p.affine
            base = base - np.einsum("pi,pi->p", gx, drift(t, x))
            w = np.einsum("pij,pi->pj", np.asarray(input_matrix(t, x)), gx)
            U = p.U
            if U.kind == "ball":
                out[s:s + chunk] = base - w @ U.center + U.radius * np.linalg.norm(w, axis=1)
            else:
                mid, half = 0.5 * (U.lo + U.hi), 0.5 * (U.hi - U.lo)
                out[s:s + chunk] = base - w @ mid + np.abs(w) @ half
        else:
            best = np.full(len(y), -np.inf)
            for u in u_nodes:
                f = p.f(t, x, np.broadcast_to(u, (len(y), p.m)))
                np.maximum(best, -np.einsum("pi,pi->p", gx, f), out=best)
            # Lipschitz padding in u from |df_j/du_l| <= lip_f
            lip_u = np.sqrt(p.m) * p.lip_f * np.abs(gx).sum(axis=1)
            out[s:s + chunk] = base + best + lip_u * u_diam / 2
    return out


def _u_grid(p, u_spacing):
    lo, hi = p.U.hull()
    spacing = np.broadcast_to(np.asarray(u_spacing, dtype=float), lo.shape)
    counts = np.maximum(1, np.ceil((hi - lo) / spacing - 1e-9)).astype(int)
    axes = [np.linspace(lo[i], hi[i], counts[i] + 1) for i in range(len(lo))]
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))
    h = (hi - lo) / counts
    return nodes, float(np.linalg.norm(h)), tuple(h.tolist())


def _pad_terms(theta, basis, centers, radii, order, kind, p):
    """Per-block padding for the HJB (``kind='hjb'``) or terminal violation."""
    bb = BoxBound(basis)
    k = basis.nvars
    c = theta.coeffs
    D = [derivative_coeffs(basis, c, i) for i in range(k)]

    def B(q):
        return bb.bound(q, centers, radii)

    per_dim = []
    for i in range(k):
        if kind == "terminal":
            q = derivative_coeffs(basis, D[i], i) if order == 2 else D[i]
            per_dim.append(B(q))
            continue
        Di_vt = derivative_coeffs(basis, D[0], i)
        Di_vx = [derivative_coeffs(basis, D[j], i) for j in range(1, k)]
        vx_bound = sum(B(D[j]) for j in range(1, k))
        if order == 2:
            Dii_vt = derivative_coeffs(basis, Di_vt, i)
            Dii_vx = [derivative_coeffs(basis, q, i) for q in Di_vx]
            m_i = (B(Dii_vt)
                   + p.cf_bound * np.sqrt(sum(B(q) ** 2 for q in Dii_vx))
                   + 2.0 * p.lip_f * sum(B(q) for q in Di_vx)
                   + p.hess_f * vx_bound)
        else:
            m_i = (B(Di_vt)
                   + p.cf_bound * np.sqrt(sum(B(q) ** 2 for q in Di_vx))
                   + p.lip_f * vx_bound)
        per_dim.append(m_i)
    return np.stack(per_dim, axis=1)


def _padding(bounds, h, order):
    if order == 2:
        return bounds @ (h ** 2 / 8.0)
    return np.linalg.norm(bounds, axis=1) * np.linalg.norm(h) / 2.0


def _certify_region(theta, p, basis, grid, order, kind, node_fn, node_mask_fn=None):
    """Max over blocks of (block node max + block padding), and the plain node max."""
    centers, radii = grid.block_boxes()
    pads = _padding(_pad_terms(theta, basis, centers, radii, order, kind, p), grid.h, order)
    pads = pads.reshape(tuple(grid.blocks))
    axes = [grid.axis(i) for i in range(len(grid.lo))]
    space = np.stack(np.meshgrid(*axes[1:], indexing="ij"), axis=-1).reshape(-1, len(axes) - 1)
    mask = None if node_mask_fn is None else node_mask_fn(grid)
    ct = grid.cells[0]
    phi, node_max = -np.inf, -np.inf
    for b in range(grid.blocks[0]):
        ts = axes[0][b * ct: (b + 1) * ct + 1]
        pts = np.column_stack([np.repeat(ts, len(space)), np.tile(space, (len(ts), 1))])
        G = node_fn(pts).reshape((len(ts),) + tuple(grid.nodes[1:]))
        if mask is not None:
            G = np.where(mask[None], G, -np.inf)
        node_max = max(node_max, float(G.max()))
        bm = _block_max(G, (ct,) + tuple(grid.cells[1:]))[0]
        phi = max(phi, float(np.max(bm + pads[b])))
    return phi, node_max


def _ball_cell_mask(grid, center, radius):
    """Nodes belonging to some cell (in the space dimensions) that meets the ball."""
    h = grid.h[1:]
    lo = grid.lo[1:]
    n_cells = grid.nodes[1:] - 1
    idx = np.stack(np.meshgrid(*[np.arange(c) for c in n_cells], indexing="ij"), axis=-1)
    cell_lo = lo + idx * h
    nearest = np.clip(center, cell_lo, cell_lo + h)
    meets = np.linalg.norm(nearest - center, axis=-1) <= radius * (1 + 1e-12)
    mask = np.zeros(tuple(grid.nodes[1:]), dtype=bool)
    for corner in np.ndindex(*([2] * len(h))):
        sl = tuple(slice(c, c + n) for c, n in zip(corner, n_cells))
        mask[sl] |= meets
    return mask


def grid_certify(theta: Theta, p: ControlProblem, basis: PolyBasis, spacing=0.01, *,
                 order=2, block_width=0.1, u_spacing=None, max_evaluations=50_000_000,
                 chunk=200_000) -> CertResult:
    """Sound upper bound on the largest violation over ``[0,T] x X x U`` and ``[0,T] x K``.

    The violation is evaluated on a regular grid over ``(t, x)`` (box hulls of
    ``X`` and ``K``).  For control-affine dynamics with a ball or box ``U`` the
    maximum over ``u`` is taken in closed form; otherwise ``U`` is gridded with
    Lipschitz padding in ``u``.  Between grid nodes the bound is padded per
    block of cells, either with second-order terms ``sum_i M_i h_i^2 / 8``
    (``order=2``, ``M_i`` bounding the second partials of the violation) or
    with ``L h / 2`` (``order=1``, ``L`` a Lipschitz bound, ``h`` the cell
    diameter).  Derivative bounds of ``V`` come from Taylor-shifted
    coefficient sums on each block; ``lip_f``, ``cf_bound`` and ``hess_f``
    of the problem bound the dynamics.

    ``spacing`` is a scalar or one value per dimension of ``(t, x)``.
    """
    import time as _time

    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    start = _time.perf_counter()
    k = basis.nvars
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (k,)).copy()
    xlo, xhi = p.X.hull()
    hjb_grid = _Grid.build(np.r_[0.0, xlo], np.r_[p.T, xhi], spacing, block_width)
    klo, khi = p.K.hull()
    term_grid = _Grid.build(np.r_[0.0, klo], np.r_[p.T, khi], spacing, block_width)

    closed_form = p.affine is not None and p.U.kind in ("ball", "box")
    if closed_form:
        u_nodes, u_diam, u_h = None, 0.0, None
    else:
        if u_spacing is None:
            lo, hi = p.U.hull()
            u_spacing = (hi - lo) / max(p.u_grid - 1, 1)
        u_nodes, u_diam, u_h = _u_grid(p, u_spacing)
    n_u = 1 if u_nodes is None else len(u_nodes)
    evaluations = int(np.prod(hjb_grid.nodes)) * n_u + int(np.prod(term_grid.nodes))
    if evaluations > max_evaluations:
        raise CertificationError(
            f"certification out of reach for {p.name!r}: {evaluations:.3g} grid evaluations "
            f"exceed the cap {max_evaluations:.3g}; use a coarser spacing or split the domain")

    hjb_phi, hjb_max = _certify_region(
        theta, p, basis, hjb_grid, order, "hjb",
        lambda pts: _hjb_node_bound(theta, p, pts, u_nodes, u_diam, chunk))
    mask_fn = None
    if p.K.kind == "ball":
        mask_fn = lambda g: _ball_cell_mask(g, p.K.center, p.K.radius)  # noqa: E731
    term_phi, term_max = _certify_region(
        theta, p, basis, term_grid, order, "terminal", theta.value_many, mask_fn)

    phi_hat = max(hjb_phi, term_phi)
    grid_max = max(hjb_max, term_max)
    return CertResult(
        phi_hat=float(phi_hat), grid_max=float(grid_max), padding=float(phi_hat - grid_max),
        spacing=tuple(hjb_grid.h.tolist()), evaluations=evaluations,
        hjb_phi=float(hjb_phi), terminal_phi=float(term_phi), order=order,
        u_spacing=u_h, seconds=_time.perf_counter() - start)
