"""Envelopes of omega_FS-subharmonic functions below the potential with a
logarithmic pole of weight t at z = 0.

Writing psi = t*zeta + v with zeta the Green potential, the envelope becomes
the largest v with v <= phi - t*zeta and (1-t) omega_FS + dd^c v >= 0.  The
discrete problem is solved by the monotone iteration

    v <- min(obstacle, mean of 4 neighbours + r_t)

on both charts, glued through ghost nodes, with r_t = h^2 pi (1-t) fs_density.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .p1geom import CHARTS, W, Z, GlobalFunction, P1Grid, ddc_density, integrate, p1grid, zeta_chart

log = logging.getLogger(__name__)


class EnvelopeConvergenceError(RuntimeError):
    pass


class MonotonicityError(AssertionError):
    pass


def green_potential(grid: P1Grid) -> GlobalFunction:
    """zeta = log(|z|^2/(1+|z|^2)) as a pure pole of weight one."""
    zero = np.zeros((grid.n, grid.n))
    return GlobalFunction(grid, zero, zero.copy(), pole=1.0)


@dataclass(frozen=True)
class SolverOptions:
    mode: str = "rb"
    omega: float = 1.0
    fp_tol: float | None = None
    max_iter: int = 1_000_000
    contact_tol: float | None = None
    check_every: int = 100
    nested: bool = True
    coarsest: int = 33


@dataclass
class SingularEnvelope:
    t: float
    psi: GlobalFunction
    v: GlobalFunction
    obstacle: dict
    contact_mask: dict
    iterations: int
    residual: float
    fp_tol: float
    contact_tol: float
    extra: dict = field(default_factory=dict)

    @property
    def grid(self):
        return self.v.grid


def obstacle(phi: GlobalFunction, t: float):
    """phi - t*zeta on both charts (+inf at the z-origin)."""
    g = phi.grid
    out = {}
    for c in CHARTS:
        with np.errstate(invalid="ignore"):
            z = zeta_chart(g.coords, c)
        out[c] = phi.chart(c) - t * z
    return out


def _defect(f):
    """mean of the 4 neighbours minus the centre (zero on the grid edge)."""
    out = np.zeros_like(f)
    out[1:-1, 1:-1] = 0.25 * (f[2:, 1:-1] + f[:-2, 1:-1] + f[1:-1, 2:] + f[1:-1, :-2]) - f[1:-1, 1:-1]
    return out


def curvature_rhs(grid: P1Grid, t: float):
    """Per-chart right-hand side h^2 pi (1-t) fs_density of the sweep."""
    r = grid.h ** 2 * np.pi * (1.0 - t) * grid.fs
    return {Z: r, W: r}


def _restrict(values, n_coarse):
    step = (values.shape[0] - 1) // (n_coarse - 1)
    return values[::step, ::step]


def _prolong(vc, n_fine):
    """Bilinear prolongation between nested grids (n_fine = 2 n_coarse - 1)."""
    nc = vc.shape[0]
    vf = np.empty((n_fine, n_fine))
    vf[::2, ::2] = vc
    vf[1::2, ::2] = 0.5 * (vc[1:, :] + vc[:-1, :])
    vf[::2, 1::2] = 0.5 * (vc[:, 1:] + vc[:, :-1])
    vf[1::2, 1::2] = 0.25 * (vc[1:, 1:] + vc[:-1, 1:] + vc[1:, :-1] + vc[:-1, :-1])
    assert nc * 2 - 1 == n_fine
    return vf


def _iterate(grid, gz, gw, rz, rw, vz, vw, opts, fp_tol, monotone_check):
    # over-relaxation can overshoot into a spurious constant fixed point when t = 1
    omega = 1.0 if opts.mode == "jacobi" else opts.omega
    grid.sync_ghosts(vz, vw)
    prev = None
    change = np.inf
    it = 0
    while it < opts.max_iter:
        change = kernels.obstacle_sweep(vz, vw, gz, gw, rz, rw, grid.active, grid.ghost_map, omega, opts.mode)
        it += 1
        if monotone_check and it % opts.check_every == 0:
            if prev is not None:
                rise = max(np.max(vz - prev[0]), np.max(vw - prev[1]))
                if rise > 0:
                    raise MonotonicityError(f"sweep iterate increased by {rise:.3e} at iteration {it}")
            prev = (vz.copy(), vw.copy())
        if change < fp_tol:
            break
    else:
        raise EnvelopeConvergenceError(f"no convergence after {it} sweeps (last change {change:.3e})")
    return it, change


def solve_psi_t(phi: GlobalFunction, t: float, opts: SolverOptions = SolverOptions(), v0=None, _tol_scale=1.0) -> SingularEnvelope:
    """Envelope with Lelong number >= t at z = 0 below ``phi``.

    ``v0`` is an optional warm start (dict chart -> array) for the regular
    part; it is clipped to the obstacle.  Jacobi mode ignores warm starts and
    starts from the obstacle so that iterates decrease monotonically.
    """
    if not 0.0 < t <= 1.0:
        raise ValueError(f"t={t} outside (0, 1]")
    grid = phi.grid
    g = obstacle(phi, t)
    finite_max = max(np.max(g[c][np.isfinite(g[c])]) for c in CHARTS)
    fp_tol = _tol_scale * (opts.fp_tol if opts.fp_tol is not None else 1e-10 * (1.0 + finite_max))
    contact_tol = opts.contact_tol if opts.contact_tol is not None else 100.0 * fp_tol
    r = curvature_rhs(grid, t)

    clip = {c: np.where(np.isfinite(g[c]), g[c], finite_max) for c in CHARTS}
    if opts.mode == "jacobi":
        v0 = None
    elif v0 is None and opts.nested and grid.n > opts.coarsest and (grid.n - 1) % 4 == 0:
        nc = (grid.n + 1) // 2
        coarse_phi = GlobalFunction(p1grid(grid.R, nc), _restrict(phi.z, nc), _restrict(phi.w, nc))
        # slow modes leave an error of order change / (1 - rate); over-solve the cheap level
        ce = solve_psi_t(coarse_phi, t, opts, _tol_scale=1e-2 if nc <= opts.coarsest else 1.0)
        v0 = {c: _prolong(ce.v.chart(c), grid.n) for c in CHARTS}
    vz = np.minimum(v0[Z], clip[Z]) if v0 is not None else clip[Z].copy()
    vw = np.minimum(v0[W], clip[W]) if v0 is not None else clip[W].copy()

    it, change = _iterate(grid, g[Z], g[W], r[Z], r[W], vz, vw, opts, fp_tol, v0 is None and omega_is_one(opts))
    v = GlobalFunction(grid, vz, vw)
    psi = GlobalFunction(grid, vz, vw, pole=t)
    contact = {c: (g[c] - v.chart(c)) <= contact_tol for c in CHARTS}
    res = fixed_point_residual(v, r, contact)
    log.debug("t=%.4f n=%d sweeps=%d change=%.2e residual=%.2e", t, grid.n, it, change, res)
    return SingularEnvelope(t, psi, v, g, contact, it, res, fp_tol, contact_tol)


def omega_is_one(opts):
    return opts.mode == "jacobi" or opts.omega == 1.0


def fixed_point_residual(v: GlobalFunction, rhs, contact):
    """sup |v - mean - rhs| over active non-contact nodes."""
    grid = v.grid
    worst = 0.0
    for c in CHARTS:
        a = v.chart(c)
        sel = grid.active & ~contact[c]
        sel[[0, -1], :] = False
        sel[:, [0, -1]] = False
        if sel.any():
            worst = max(worst, float(np.max(np.abs(_defect(a) + rhs[c])[sel])))
    return worst


def solve_family(phi: GlobalFunction, t_grid, opts: SolverOptions = SolverOptions(), progress=None):
    """Envelopes for every t (sorted ascending); each solve is independent."""
    family = []
    for t in sorted(float(x) for x in t_grid):
        family.append(solve_psi_t(phi, t, opts))
        if progress:
            progress(t)
    return family


def default_t_grid(points=65, tail=tuple(range(7, 17))):
    """Uniform grid on [1/(points-1), 1] plus the points 1 - 2^-k."""
    base = np.linspace(0.0, 1.0, points)[1:]
    extra = [1.0 - 2.0 ** -k for k in tail]
    return np.unique(np.concatenate([base, extra]))


def lelong_check(e: SingularEnvelope, radius=0.1, mass_tol=None):
    """Bound of the regular part on 0 < |z| <= radius and the atom bookkeeping.

    Returns a dict with ``bound`` (sup |v| on the punctured disc),
    ``atom`` and ``atom_mass_local`` (integrated mass of a small disc minus
    its smooth part) which should equal t.
    """
    grid = e.grid
    disc = (grid.abs <= radius) & (grid.abs > 0)
    bound = float(np.max(np.abs(e.v.z[disc])))
    dens = ddc_density(e.psi)
    region = {Z: grid.abs <= radius, W: np.zeros_like(disc)}
    local = integrate(dens, region)
    smooth = integrate(type(dens)(grid, dens.z, dens.w, 0.0), region)
    return {"t": e.t, "bound": bound, "atom": dens.atom_mass_at_origin, "atom_mass_local": local - smooth, "local_mass": local}


def monotonicity_check(family, tol=None):
    """Node-wise psi_{t'} <= psi_t for t <= t' across consecutive envelopes.

    Only owned nodes are compared: each point of P^1 once.  The duplicate
    values a chart carries on the other chart's side of the overlap differ
    from the owner's by the O(h^2) gluing error.
    """
    fam = sorted(family, key=lambda e: e.t)
    worst = {"gap": -np.inf, "pair": None, "node": None}
    ok = True
    for a, b in zip(fam, fam[1:]):
        tol_ab = tol if tol is not None else max(a.fp_tol, b.fp_tol) * 10
        for c in CHARTS:
            grid = a.grid
            with np.errstate(invalid="ignore"):
                diff = b.psi.full(c) - a.psi.full(c)
            diff = np.where(np.isfinite(diff), diff, -np.inf)
            diff[grid.own[c] <= 0] = -np.inf
            k = int(np.argmax(diff))
            if diff.flat[k] > worst["gap"]:
                worst = {"gap": float(diff.flat[k]), "pair": (a.t, b.t), "node": (c, *np.unravel_index(k, diff.shape))}
            if diff.flat[k] > tol_ab:
                ok = False
    worst["node"] = tuple(int(x) if not isinstance(x, str) else x for x in worst["node"]) if worst["node"] else None
    return {"passed": ok, **worst}
