"""Geodesic rays from the envelope family: the Legendre transform in s, the
boundary-value solution on P^1 x D and its degeneracy.

With s = -log|tau|^2 the S^1-invariant solution of the singular problem is

    tilde_Phi(z, s) = max_t psi_t(z) - (1 - t) s,

taken over the solved t-grid together with psi_0 = phi, so that
tilde_Phi(., 0) = phi exactly.  The solution with boundary data phi(tau z)
on |tau| = 1 is

    Phi(z, tau) = tilde_Phi(tau z, tau) + log(1+|tau z|^2) - log|tau|^2 - log(1+|z|^2).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import conformal, kernels, perron
from .p1geom import CHARTS, W, Z, CurrentDensity, GlobalFunction, P1Grid, ddc_density, integrate, zeta_chart

log = logging.getLogger(__name__)

S_MAX = 8.0
DEGENERACY_TOL = 5e-3


class HMAEError(ValueError):
    pass


def default_s_grid(s_max=S_MAX, uniform=33, cluster=8, first=0.25):
    """``uniform`` points on [0, s_max] plus ``cluster`` geometric points below ``first``."""
    base = np.linspace(0.0, s_max, uniform)
    extra = first * 2.0 ** -np.arange(1, cluster + 1)
    return np.unique(np.concatenate([base, extra]))


def s_of_radius(r):
    return -2.0 * np.log(r)


def radius_of_s(s):
    return float(np.exp(-0.5 * s))


@dataclass
class GeodesicSolution:
    """tilde_Phi on the s-grid with the data needed to evaluate it anywhere.

    ``v[c]`` stacks the regular parts of psi_t (row 0 is phi itself, t = 0);
    ``tstar[c][k]`` is the index of the largest active t at s_grid[k].
    """

    grid: P1Grid
    t: np.ndarray
    v: dict
    s_grid: np.ndarray
    tilde: list
    tstar: dict
    tie_tol: float
    fp_tol: float
    extra: dict = field(default_factory=dict)

    def psi(self, k, c):
        """psi_{t_k} in chart ``c``."""
        if self.t[k] == 0:
            return self.v[c][k]
        with np.errstate(invalid="ignore"):
            return self.t[k] * zeta_chart(self.grid.coords, c) + self.v[c][k]

    def slice_index(self, s):
        k = int(np.argmin(np.abs(self.s_grid - s)))
        if abs(self.s_grid[k] - s) > 1e-12:
            raise HMAEError(f"s = {s} is not on the s-grid")
        return k

    def at_s(self, s):
        """(tilde_Phi(., s), active-t index) for any s >= 0, on the grid nodes."""
        vals, arg = {}, {}
        for c in CHARTS:
            stack = np.stack([self.psi(k, c).ravel() for k in range(self.t.size)])
            f, a = kernels.legendre_max(stack, self.t, s, self.tie_tol)
            vals[c] = f.reshape(self.grid.n, self.grid.n)
            arg[c] = a.reshape(self.grid.n, self.grid.n)
        return GlobalFunction(self.grid, vals[Z], vals[W]), arg


def legendre_build(family, phi: GlobalFunction, s_grid=None, tie_tol=None) -> GeodesicSolution:
    """tilde_Phi(z, s) = max over {0} and the t-grid of psi_t(z) - (1 - t) s."""
    grid = phi.grid
    s_grid = default_s_grid() if s_grid is None else np.asarray(s_grid, float)
    if s_grid[0] != 0.0 or np.any(np.diff(s_grid) <= 0):
        raise HMAEError("s-grid must start at 0 and increase")
    fam = sorted(family, key=lambda e: e.t)
    t = np.array([0.0] + [e.t for e in fam])
    v = {c: np.stack([phi.chart(c)] + [e.v.chart(c) for e in fam]) for c in CHARTS}
    fp_tol = max(e.fp_tol for e in fam)
    tie_tol = 10.0 * fp_tol if tie_tol is None else tie_tol
    g = GeodesicSolution(grid, t, v, s_grid, [], {Z: [], W: []}, tie_tol, fp_tol)
    stacks = {c: np.stack([g.psi(k, c).ravel() for k in range(t.size)]) for c in CHARTS}
    for s in s_grid:
        vals = {}
        for c in CHARTS:
            f, a = kernels.legendre_max(stacks[c], t, s, tie_tol)
            vals[c] = f.reshape(grid.n, grid.n)
            g.tstar[c].append(a.reshape(grid.n, grid.n))
        g.tilde.append(GlobalFunction(grid, vals[Z], vals[W]))
    g.tstar = {c: np.stack(g.tstar[c]) for c in CHARTS}
    return g


def _stack(g: GeodesicSolution, c):
    return np.stack([x.chart(c) for x in g.tilde])


def convexity_report(g: GeodesicSolution):
    """Slopes in s of tilde_Phi lie in [-1, 0] and do not decrease (every node)."""
    worst_conv = 0.0
    lo, hi = np.inf, -np.inf
    ds = np.diff(g.s_grid)
    for c in CHARTS:
        F = _stack(g, c)
        slope = np.diff(F, axis=0) / ds[:, None, None]
        fin = np.isfinite(slope)
        lo = min(lo, float(slope[fin].min()))
        hi = max(hi, float(slope[fin].max()))
        dsl = np.diff(slope, axis=0)
        fin2 = np.isfinite(dsl)
        worst_conv = min(worst_conv, float(dsl[fin2].min()) if fin2.any() else 0.0)
    # roundoff in F is amplified by 1/ds in the slopes
    tol = 4.0 * g.fp_tol / ds.min()
    return {
        "min_slope": lo,
        "max_slope": hi,
        "min_slope_increment": worst_conv,
        "tol": tol,
        "passed": bool(lo >= -1.0 - tol and hi <= tol and worst_conv >= -2.0 * tol),
    }


def legendre_invert_check(g: GeodesicSolution, family, interior_only=True):
    """psi_t recovered as min over the s-grid of tilde_Phi + (1 - t) s.

    Compared on owned nodes where the infimum is attained inside the s-window
    (active t at s_max at least t); elsewhere it lies beyond s_max.
    """
    out = []
    for e in sorted(family, key=lambda x: x.t):
        if interior_only and not 0.0 < e.t < 1.0:
            continue
        err, cover, total = 0.0, 0, 0
        for c in CHARTS:
            F = _stack(g, c).reshape(g.s_grid.size, -1)
            rec = kernels.legendre_inf(F, g.s_grid, e.t).reshape(g.grid.n, g.grid.n)
            exact = e.psi.full(c)
            inside = g.t[g.tstar[c][-1]] >= e.t
            sel = (g.grid.own[c] > 0) & inside & np.isfinite(exact)
            cover += int(sel.sum())
            total += int(((g.grid.own[c] > 0) & np.isfinite(exact)).sum())
            if sel.any():
                err = max(err, float(np.max(np.abs(rec - exact)[sel])))
        out.append({"t": e.t, "error": err, "coverage": cover / max(total, 1)})
    return out


def _route(grid: P1Grid, zq):
    """Split query points (z-values, inf allowed) by evaluation chart.

    Points with |z| <= 1 are read in the z-chart, the rest in the w-chart
    at 1/z, so every stencil stays clear of the ghost nodes.
    """
    zq = np.asarray(zq, complex).ravel()
    in_z = np.isfinite(zq) & (np.abs(zq) <= 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        wq = np.where(np.isfinite(zq), 1.0 / np.where(zq == 0, 1.0, zq), 0.0)
    return in_z, zq, wq


def evaluate_tilde(g: GeodesicSolution, zq, s, rows=None):
    """tilde_Phi at arbitrary P^1 points (z-values) and s >= 0.

    Each psi_t is evaluated as t*zeta (exact) plus its interpolated regular
    part, then the Legendre supremum is taken; interpolating tilde_Phi
    itself would smear its steep profile near z = 0 at large s.
    """
    grid = g.grid
    shape = np.shape(zq)
    in_z, zc, wc = _route(grid, zq)
    rows = np.arange(g.t.size) if rows is None else np.asarray(rows)
    out = np.empty(zc.size)
    arg = np.empty(zc.size, np.int64)
    for c, sel, coord in ((Z, in_z, zc), (W, ~in_z, wc)):
        if not sel.any():
            continue
        pts = coord[sel]
        with np.errstate(divide="ignore", invalid="ignore"):
            zeta = zeta_chart(pts, c)
        idx, wts = grid.bilinear_stencil(pts)
        V = g.v[c][rows].reshape(rows.size, -1)
        f, a = kernels.legendre_at_points(V, g.t[rows], s, zeta, idx, wts, g.tie_tol)
        out[sel] = f
        arg[sel] = rows[a]
    return out.reshape(shape), arg.reshape(shape)


def _log_terms(grid: P1Grid, c, r):
    """log(1+|tau z|^2) - log|tau|^2 - log(1+|z|^2) for real tau = r, per chart."""
    a2 = grid.abs ** 2
    if c == Z:
        return np.log1p(r * r * a2) - np.log(r * r) - np.log1p(a2)
    return np.log(a2 + r * r) - np.log(r * r) - np.log1p(a2)


def to_boundary_problem(g: GeodesicSolution, tau) -> GlobalFunction:
    """Phi(., tau) of the boundary-value problem with data phi(tau z) on |tau| = 1."""
    tau = complex(tau)
    r = abs(tau)
    if r == 0.0:
        raise HMAEError("tau = 0 is outside the punctured disc")
    if r > 1.0:
        raise HMAEError("|tau| > 1")
    s = -np.log(r * r)
    grid = g.grid
    vals = {}
    for c in CHARTS:
        q = conformal.query_points(grid, c, 1.0)
        if c == W:
            fin = np.isfinite(q)
            q = np.where(fin, tau * np.where(fin, q, 0.0), np.inf)
        else:
            q = tau * q
        f, _ = evaluate_tilde(g, q, s)
        vals[c] = f + _log_terms(grid, c, r)
    return GlobalFunction(grid, vals[Z], vals[W])


def evaluate_phi_at(g: GeodesicSolution, zq):
    """phi at arbitrary points through the same interpolation (row t = 0)."""
    f, _ = evaluate_tilde(g, zq, 0.0, rows=[0])
    return f


def fibre_density(g: GeodesicSolution, tau) -> CurrentDensity:
    """omega_FS + dd^c Phi(., tau) as a density on both charts."""
    return ddc_density(to_boundary_problem(g, tau))


def _second_s(F, s):
    """Three-point second derivative on a non-uniform grid (NaN at the ends)."""
    out = np.full(F.shape, np.nan)
    h0 = (s[1:-1] - s[:-2])[:, None, None]
    h1 = (s[2:] - s[1:-1])[:, None, None]
    out[1:-1] = 2.0 * (F[2:] * h0 - F[1:-1] * (h0 + h1) + F[:-2] * h1) / (h0 * h1 * (h0 + h1))
    return out


def _first_s(F, s):
    out = np.full(F.shape, np.nan)
    out[1:-1] = (F[2:] - F[:-2]) / (s[2:] - s[:-2])[:, None, None]
    return out


def ma_residual(g: GeodesicSolution, perturb=None):
    """Determinant proxy of the complex Hessian of tilde_Phi + log(1+|z|^2) in (z, tau).

    With U(z, s) and s = -log|tau|^2,
    U_{z zbar} U_{tau taubar} - |U_{z taubar}|^2 = |tau|^-2 [ (Lap_z U / 4) U_ss - |grad_z U_s|^2 / 4 ];
    the bracket is returned per chart as an (S, n, n) field.  ``perturb``
    is an optional callable s -> added function of s (fixture hook).
    """
    grid = g.grid
    h = grid.h
    s = g.s_grid
    out = {}
    for c in CHARTS:
        lg = np.log1p(grid.abs ** 2)
        F = _stack(g, c)
        if perturb is not None:
            F = F + perturb(s)[:, None, None]
        U = F + lg[None]
        lap = np.full(U.shape, np.nan)
        lap[:, 1:-1, 1:-1] = (U[:, 2:, 1:-1] + U[:, :-2, 1:-1] + U[:, 1:-1, 2:] + U[:, 1:-1, :-2] - 4 * U[:, 1:-1, 1:-1]) / h ** 2
        Us = _first_s(U, s)
        gx = np.full(U.shape, np.nan)
        gy = np.full(U.shape, np.nan)
        gx[:, 1:-1, :] = (Us[:, 2:, :] - Us[:, :-2, :]) / (2 * h)
        gy[:, :, 1:-1] = (Us[:, :, 2:] - Us[:, :, :-2]) / (2 * h)
        res = 0.25 * lap * _second_s(U, s) - 0.25 * (gx ** 2 + gy ** 2)
        res[:, ~grid.active] = np.nan
        out[c] = res
    return out


def h_function(g: GeodesicSolution):
    """Forward-difference d tilde_Phi / ds per chart, shape (S-1, n, n)."""
    ds = np.diff(g.s_grid)[:, None, None]
    return {c: np.diff(_stack(g, c), axis=0) / ds for c in CHARTS}


def h_exact(g: GeodesicSolution, s=None):
    """Right derivative in s: t* - 1 for the largest active t (per chart)."""
    if s is None:
        return {c: g.t[g.tstar[c]] - 1.0 for c in CHARTS}
    _, arg = g.at_s(s)
    return {c: g.t[arg[c]] - 1.0 for c in CHARTS}


def omega_t_of_fibre(g: GeodesicSolution, r, t):
    """Omega_t(phi_r) = {H + 1 < t} on the slice s = -log r^2 (node mask)."""
    s = s_of_radius(r)
    H = h_exact(g, s)
    mask = {c: H[c] + 1.0 < t for c in CHARTS}
    return mask


def region_hausdorff(grid: P1Grid, mask, r):
    """Hausdorff distance between a node mask and A_r = f(D_r).

    Measured in chart coordinates on owned nodes; a node outside the
    region contributes its distance to the boundary polyline, a region node
    missing from the mask its distance to the nearest mask node.
    """
    curve = conformal.boundary_polyline(r)
    region = conformal.A_mask(r, grid)
    worst = 0.0
    for c in CHARTS:
        own = grid.own[c] > 0
        m = mask[c]
        bd = curve if c == Z else 1.0 / curve
        extra = own & m & ~region[c]
        if extra.any():
            pts = grid.coords[extra]
            d = _distance_to_polyline(bd, pts)
            worst = max(worst, float(d.max()))
        missing = own & region[c] & ~m
        if missing.any():
            dist = ndimage.distance_transform_edt(~m) * grid.h
            worst = max(worst, float(dist[missing].max()))
    return worst


def _distance_to_polyline(curve, pts):
    a = curve
    b = np.roll(curve, -1)
    out = np.empty(pts.size)
    for k0 in range(0, pts.size, 512):
        p = pts[k0:k0 + 512, None]
        ab = b - a
        u = np.clip(((p - a) * np.conj(ab)).real / np.maximum(np.abs(ab) ** 2, 1e-300), 0.0, 1.0)
        out[k0:k0 + 512] = np.abs(p - (a + u * ab)).min(axis=1)
    return out


def h_on_boundary(g: GeodesicSolution, r, samples=1024):
    """max |H| over samples of the curve f(r e^{i theta}) (bilinear in the node field)."""
    s = s_of_radius(r)
    H = h_exact(g, s)
    pts = conformal.boundary_polyline(r, samples)
    in_z, zc, wc = _route(g.grid, pts)
    vals = np.empty(pts.size)
    for c, sel, coord in ((Z, in_z, zc), (W, ~in_z, wc)):
        if sel.any():
            vals[sel] = g.grid.interpolate(H[c], coord[sel])
    return float(np.abs(vals).max())


def prop26_error(g: GeodesicSolution, psi1: GlobalFunction, k, margin=conformal.SAFETY_MARGIN):
    """sup |tilde_Phi(., s_k) - psi_1| on the eroded complement of A_r (active nodes)."""
    s = g.s_grid[k]
    if s == 0:
        return None
    r = radius_of_s(s)
    comp = conformal.A_complement_mask(r, g.grid, margin)
    err = 0.0
    for c in CHARTS:
        with np.errstate(invalid="ignore"):
            d = np.abs(g.tilde[k].chart(c) - psi1.full(c))
        sel = comp[c] & g.grid.active & np.isfinite(d)
        if sel.any():
            err = max(err, float(d[sel].max()))
    return err


def lower_bound_violation(g: GeodesicSolution, psi1: GlobalFunction):
    """max over slices and nodes of psi_1 - tilde_Phi (should be <= fp_tol)."""
    worst = -np.inf
    for x in g.tilde:
        for c in CHARTS:
            with np.errstate(invalid="ignore"):
                d = psi1.full(c) - x.chart(c)
            d = d[np.isfinite(d)]
            worst = max(worst, float(d.max()))
    return worst


def boundary_recovery(g: GeodesicSolution, s_values=None):
    """sup_z |Phi(z, tau) - phi(tau z)| at the given s (default: the cluster near 0)."""
    if s_values is None:
        s_values = [s for s in g.s_grid if 0 < s < g.s_grid[g.s_grid > 0][0] * 1.0001 + 0.26]
    grid = g.grid
    out = []
    for s in sorted(s_values):
        r = radius_of_s(s)
        Phi = to_boundary_problem(g, r)
        dev = 0.0
        for c in CHARTS:
            q = conformal.query_points(grid, c, r)
            ref = evaluate_phi_at(g, q)
            d = np.abs(Phi.chart(c) - ref)[grid.active]
            dev = max(dev, float(np.nanmax(d)))
        out.append({"s": float(s), "deviation": dev})
    return out


@dataclass
class SliceReport:
    s: float
    r: float
    s_nodes: int
    coverage: float
    detected_area: float
    closed_form_error: float
    total_mass: float
    max_density_on_S: float


def degeneracy_report(g: GeodesicSolution, tol=DEGENERACY_TOL, margin=conformal.SAFETY_MARGIN, slices=None):
    """Fibre densities across interior s-slices compared with the predicted S."""
    grid = g.grid
    ks = [k for k in range(1, g.s_grid.size - 1)] if slices is None else list(slices)
    rows = []
    for k in ks:
        s = float(g.s_grid[k])
        r = radius_of_s(s)
        Phi = to_boundary_problem(g, r)
        dens = ddc_density(Phi)
        S = conformal.predicted_S_mask(r, grid, margin)
        n_s, hit, worst, cf = 0, 0, 0.0, 0.0
        area = 0.0
        for c in CHARTS:
            d = dens.chart(c)
            sel = S[c] & grid.active & np.isfinite(d)
            sel[[0, -1], :] = False
            sel[:, [0, -1]] = False
            n_s += int(sel.sum())
            hit += int((d[sel] <= tol).sum())
            if sel.any():
                worst = max(worst, float(d[sel].max()))
                with np.errstate(invalid="ignore"):
                    cfe = np.abs(Phi.chart(c) - zeta_chart(grid.coords, c))[sel]
                cf = max(cf, float(cfe[np.isfinite(cfe)].max()))
            det = grid.active & np.isfinite(d) & (d <= tol)
            area += float((det * grid.own[c]).sum() * grid.h ** 2)
        mass = integrate(dens, {c: np.ones((grid.n, grid.n), bool) for c in CHARTS})
        rows.append(SliceReport(s, r, n_s, hit / n_s if n_s else float("nan"), area, cf, mass, worst))
    return rows


def direct_perron_oracle(phi_coarse: GlobalFunction, r_points=17, **kw) -> perron.PerronSolution:
    """Coarse Perron envelope of the singular problem, independent of the envelopes."""
    return perron.solve_perron(phi_coarse, r_points=r_points, **kw)


def coarse_restriction(values, n_fine, n_coarse):
    """Fine-grid array sampled on the nested coarse nodes."""
    if (n_fine - 1) % (n_coarse - 1):
        raise HMAEError(f"n = {n_coarse} is not nested in n = {n_fine}")
    step = (n_fine - 1) // (n_coarse - 1)
    return values[..., ::step, ::step]


def oracle_report(g: GeodesicSolution, sol: perron.PerronSolution, psi1: GlobalFunction):
    """Compare the Perron oracle with tilde_Phi on the coarse nodes.

    Layers r_k in (0, 1] are matched with s_k = -log r_k^2 through the exact
    Legendre supremum; r = 0 is matched with psi_1.  The pole node is left
    out (both sides are -inf there).
    """
    nf, nc = g.grid.n, sol.grid.n
    if abs(g.grid.R - sol.grid.R) > 1e-12:
        raise HMAEError("oracle and geodesic grids differ in chart half-width")
    mask = sol.comparison_mask()
    gaps = []
    for k in range(1, sol.r.size):
        ref, _ = g.at_s(float(sol.s[k]))
        gap = 0.0
        for c in CHARTS:
            d = np.abs(sol.tilde[c][k] - coarse_restriction(ref.chart(c), nf, nc))
            gap = max(gap, float(d[mask[c]].max()))
        gaps.append({"r": float(sol.r[k]), "s": float(sol.s[k]), "gap": gap})
    boundary = 0.0
    lower = -np.inf
    axis = 0.0
    for c in CHARTS:
        p1 = coarse_restriction(psi1.full(c), nf, nc)
        phi0 = coarse_restriction(g.v[c][0], nf, nc)
        boundary = max(boundary, float(np.abs(sol.tilde[c][-1] - phi0)[mask[c]].max()))
        with np.errstate(invalid="ignore"):
            lower = max(lower, float((p1[None] - sol.tilde[c])[:, mask[c]].max()))
            axis = max(axis, float(np.abs(sol.tilde[c][0] - p1)[mask[c]].max()))
    return {
        "layers": gaps,
        "max_gap": max(x["gap"] for x in gaps),
        "boundary_error": boundary,
        "axis_error_vs_psi1": axis,
        "max_psi1_excess": lower,
        "sweeps": sol.sweeps,
    }
