"""Direct Perron oracle for the geodesic, independent of the Legendre route.

Circle invariance reduces Phi~(z, tau) to a function of (z, r), r = |tau|,
on [0, 1].  Write Phi~ = G + V with ``G = log((|z|^2 + r^2) / (1 + |z|^2))``,
which carries the unit Lelong number at p = (0, 0), and B = G + log(1 + |z|^2)
(``log(|z|^2 + r^2)`` on the z-chart, ``log(1 + r^2 |w|^2)`` on the w-chart).
Then V + B is plurisubharmonic exactly when it is sub-mean-valued on every
complex line.  A line through (z, r) with direction (alpha, beta), beta real,
meets the four points

    (z +- alpha, |r +- beta|),   (z +- i alpha, sqrt(r^2 + beta^2)),

the last pair linearly interpolated between r-layers (which keeps the scheme
monotone).  The discrete envelope is the largest V with

    V(p) <= min_d  mean_d(V + B) - B(p)

below the barrier of phi and the maximum principle on the discs through p
(the latter holds the Lelong condition where stencils touch p).  Gauss-Seidel from the barrier
decreases monotonically to the envelope.  The layer r = 1 carries V = phi;
r = 0 is an interior axis (|r - beta| reflects through it).

In these coordinates V is smooth away from p, where Phi~ has a cone
singularity; in s = -log r^2 that cone would stretch over every large s.
Near p, V is homogeneous of degree zero and the lattice means misjudge it
by O(1), so nodes within a few z-cells of p keep only the barrier (the
line barrier is sharp there).  p itself is left out of comparisons.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .p1geom import CHARTS, W, Z, GlobalFunction, P1Grid, zeta_chart

log = logging.getLogger(__name__)

#: (P, Q, K): z-step (P + iQ) h paired with an r-step K h_r
DIRECTIONS = np.array(
    [(P, Q, K) for K in (1, 2) for P, Q in ((1, 0), (0, 1), (-1, 0), (0, -1), (1, 1), (-1, 1), (-1, -1), (1, -1))]
    + [(1, 0, 0), (1, 1, 0), (0, 0, 1), (0, 0, 2)],
    dtype=np.int64,
)


class PerronConvergenceError(RuntimeError):
    pass


def r_layers(points):
    return np.linspace(0.0, 1.0, points)


def s_of_layers(r):
    """s = -log r^2 per layer (inf on the axis)."""
    with np.errstate(divide="ignore"):
        return -2.0 * np.log(np.asarray(r, float))


def background(grid: P1Grid, r):
    """(B, G) per chart on the (r, x, y) lattice."""
    r2 = np.asarray(r, float)[:, None, None] ** 2
    a2 = grid.abs[None] ** 2
    with np.errstate(divide="ignore"):
        B = {Z: np.log(a2 + r2), W: np.log1p(r2 * a2)}
    G = {Z: B[Z] - np.log1p(a2), W: B[W] - np.log1p(a2)}
    return B, G


def build_stencil(r, directions=DIRECTIONS):
    """Integer z-offsets, fractional r-layers and validity per (direction, layer)."""
    r = np.asarray(r, float)
    L = r.size
    h_r = r[1] - r[0]
    nd = len(directions)
    zoff = np.zeros((nd, 4, 2), np.int64)
    rlo = np.zeros((nd, L, 4), np.int64)
    rfr = np.zeros((nd, L, 4))
    ok = np.zeros((nd, L), np.bool_)
    for d, (P, Q, K) in enumerate(directions):
        zoff[d] = [(P, Q), (-P, -Q), (-Q, P), (Q, -P)]
        b = K * h_r
        for k in range(L):
            targets = (r[k] + b, abs(r[k] - b), np.hypot(r[k], b), np.hypot(r[k], b))
            if max(targets) > 1.0 + 1e-12:
                continue
            ok[d, k] = True
            for q, tq in enumerate(targets):
                pos = min(tq / h_r, L - 1.0)
                lo = min(int(np.floor(pos + 1e-12)), L - 1)
                fr = pos - lo
                if fr < 1e-12:
                    fr = 0.0
                rlo[d, k, q] = lo
                rfr[d, k, q] = fr
    return zoff, rlo, rfr, ok


def defect_terms(grid: P1Grid, r, stencil):
    """c_d = mean_d(B) - B(p) per chart, shape (directions, layers, n, n).

    The mean uses the same lattice points and interpolation as V, so the
    scheme acts on V + B consistently.  Stencils that touch the pole, where B
    is -inf, carry +inf: those constraints are dropped and the barrier holds
    the Lelong condition there.
    """
    zoff, rlo, rfr, ok = stencil
    B, _ = background(grid, r)
    n, L = grid.n, len(r)
    out = {}
    for c in CHARTS:
        Bc = B[c]
        terms = np.full((zoff.shape[0], L, n, n), np.inf)
        for d in range(zoff.shape[0]):
            for k in range(L):
                if not ok[d, k]:
                    continue
                m = np.zeros((n, n))
                for q in range(4):
                    di, dj = int(zoff[d, q, 0]), int(zoff[d, q, 1])
                    lo, f = rlo[d, k, q], rfr[d, k, q]
                    layer = Bc[lo] if f == 0.0 else (1.0 - f) * Bc[lo] + f * Bc[lo + 1]
                    m += np.roll(np.roll(layer, -di, axis=0), -dj, axis=1)
                with np.errstate(invalid="ignore"):
                    t = 0.25 * m - Bc[k]
                terms[d, k] = np.where(np.isfinite(t), t, np.inf)
        out[c] = np.ascontiguousarray(terms)
    return out


def line_barrier(phi: GlobalFunction, r, samples=256):
    """Upper bound for Phi~ from the discs {z = a tau}, per chart, shape (layers, n, n).

    On such a disc Phi~ + log(1 + |a tau|^2) is subharmonic with a log pole of
    unit mass at tau = 0 and boundary values phi(a e^{i theta}) + log(1 + |a|^2),
    so it lies below log|tau|^2 plus their maximum.  On the axis r = 0 the
    bound tends to zeta + phi(infinity).
    """
    grid = phi.grid
    ring = np.exp(2j * np.pi * np.arange(samples) / samples)
    out = {}
    for c in CHARTS:
        with np.errstate(divide="ignore"):
            rz = grid.abs if c == Z else np.where(grid.abs == 0, np.inf, 1.0 / np.where(grid.abs == 0, 1.0, grid.abs))
        bound = np.full((len(r),) + rz.shape, np.inf)
        for k, rk in enumerate(r):
            if rk <= 0:
                # limit r -> 0: log|z|^2 - log(1 + |z|^2) + phi(infinity)
                with np.errstate(divide="ignore"):
                    bound[k] = zeta_chart(grid.coords, c) + phi.w[grid.center, grid.center]
                continue
            flat = (rz / rk).ravel()
            fin = np.isfinite(flat)
            m = np.full(flat.size, np.inf)
            pts = flat[fin, None] * ring[None, :]
            vals = phi.evaluate(pts.ravel()).reshape(pts.shape) + np.log1p(flat[fin, None] ** 2)
            m[fin] = vals.max(axis=1)
            with np.errstate(invalid="ignore"):
                b = np.log(rk * rk) + m.reshape(rz.shape) - np.log1p(rz ** 2)
            bound[k] = np.where(np.isfinite(rz), b, np.inf)
        out[c] = bound
    return out


@dataclass
class PerronSolution:
    grid: P1Grid
    r: np.ndarray
    tilde: dict
    sweeps: int
    change: float

    @property
    def s(self):
        return s_of_layers(self.r)

    def slice(self, k):
        """Phi~ on layer k as a pair of chart arrays."""
        return {c: self.tilde[c][k] for c in CHARTS}

    def comparison_mask(self):
        """Owned nodes minus the pole node, per chart."""
        g = self.grid
        out = {c: g.own[c] > 0 for c in CHARTS}
        out[Z] = out[Z].copy()
        out[Z][g.center, g.center] = False
        return out


def solve_perron(phi: GlobalFunction, r_points=17, tol=1e-8, max_sweeps=200_000, directions=DIRECTIONS, barrier=True,
                 cone=5.0):
    """Discrete Perron envelope on a coarse (r, z) lattice, r = |tau| uniform on [0, 1].

    Nodes within ``cone`` z-cells of p (in the (z, r) metric) keep only the
    barrier; the lattice cannot resolve the cone there.
    """
    grid = phi.grid
    r = r_layers(r_points)
    B, G = background(grid, r)
    stencil = build_stencil(r, directions)
    cd = defect_terms(grid, r, stencil)
    if cone > 0:
        near = np.hypot(grid.abs[None], r[:, None, None]) < cone * grid.h
        cd[Z][:, near] = np.inf
    cap = {c: np.broadcast_to(phi.chart(c)[None], G[c].shape) for c in CHARTS}
    if barrier:
        lb = line_barrier(phi, r)
        cap = {c: np.minimum(cap[c], lb[c]) for c in CHARTS}
    with np.errstate(invalid="ignore"):
        upper = {c: np.ascontiguousarray(np.where(np.isfinite(G[c]), cap[c] - G[c], np.inf)) for c in CHARTS}
    V = {c: np.ascontiguousarray(np.where(np.isfinite(upper[c]), upper[c], 0.0)) for c in CHARTS}
    for c in CHARTS:
        V[c][-1] = phi.chart(c)
    act = {c: np.broadcast_to(grid.active[None], V[c].shape).copy() for c in CHARTS}
    act[Z][0, grid.center, grid.center] = False
    pole = (grid.center, grid.center)
    V[Z][0, pole[0], pole[1]] = V[Z][0, pole[0] + 1, pole[1]]
    change = np.inf
    sweeps = 0
    while sweeps < max_sweeps:
        change = kernels.perron_sweep(V[Z], V[W], cd[Z], cd[W], upper[Z], upper[W], act[Z], act[W], stencil,
                                      grid.ghost_map, pole)
        sweeps += 1
        if change < tol:
            break
    else:
        raise PerronConvergenceError(f"no convergence after {max_sweeps} sweeps (change {change:.3e})")
    log.info("perron: %d sweeps, last change %.3e", sweeps, change)
    with np.errstate(invalid="ignore"):
        tilde = {c: V[c] + G[c] for c in CHARTS}
    return PerronSolution(grid, r, tilde, sweeps, float(change))


def compare_with(sol: PerronSolution, tilde_slices, layers=None):
    """Sup-norm gap per layer against ``tilde_slices[k]`` (GlobalFunction or chart dict)."""
    mask = sol.comparison_mask()
    layers = range(sol.r.size) if layers is None else layers
    out = []
    for k, ref in zip(layers, tilde_slices):
        gap = 0.0
        for c in CHARTS:
            v = ref.chart(c) if hasattr(ref, "chart") else ref[c]
            with np.errstate(invalid="ignore"):
                d = np.abs(sol.tilde[c][k] - v)
            gap = max(gap, float(d[mask[c]].max()))
        out.append(gap)
    return np.array(out)
