"""Non-contact sets {psi_t < phi} of the envelopes: masks, mass, topology."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from skimage import measure

from .p1geom import CHARTS, W, Z, GlobalFunction, P1Grid, ddc_density, integrate, other

_CROSS = ndimage.generate_binary_structure(2, 1)


class ResolutionError(ValueError):
    pass


def _nearest_image_index(grid: P1Grid, nodes):
    img = 1.0 / grid.coords[nodes]
    fi, fj = grid.fractional_index(img)
    i = np.clip(np.rint(fi).astype(int), 0, grid.n - 1)
    j = np.clip(np.rint(fj).astype(int), 0, grid.n - 1)
    return i, j


def harmonise(grid: P1Grid, mask):
    """Copy each chart's mask onto the nodes the other chart owns.

    Ghosts and the non-owned side of the overlap follow the owner, so the
    two charts agree wherever both are counted.
    """
    out = {c: mask[c].copy() for c in CHARTS}
    for c in CHARTS:
        foreign = ~grid.active | (grid.own[c] <= 0)
        i, j = _nearest_image_index(grid, foreign)
        out[c][foreign] = mask[other(c)][i, j]
    return out


def extract_domain(e, phi: GlobalFunction | None = None):
    """Omega_t as a node mask: complement of the solver's contact set.

    Single-node islands are dropped; ghost nodes follow the owning chart.
    """
    grid = e.grid
    dom = {}
    for c in CHARTS:
        m = ~e.contact_mask[c]
        nb = ndimage.convolve(m.astype(int), _CROSS.astype(int), mode="constant") - m
        m = m & (nb > 0)
        dom[c] = m
    dom = harmonise(grid, dom)
    if e.t > 0:
        dom[Z][grid.center, grid.center] = True
    return dom


def domain_mass(mask, phi: GlobalFunction) -> float:
    """Mass of the region under omega_FS + dd^c phi (node-indicator quadrature)."""
    return integrate(ddc_density(phi), mask)


def _shifted(a, k, fill):
    """``a`` moved by ``k`` rows along axis 0 (row i holds a[i - k])."""
    out = np.full_like(a, fill)
    if k > 0:
        out[k:] = a[:-k]
    elif k < 0:
        out[:k] = a[-k:]
    else:
        out[:] = a
    return out


def _link_correction(gap, dens, mask, own, h, axis, reach=1.5, fit=4):
    """Signed mass moved across free-boundary links along one axis.

    The gap g - v vanishes quadratically at the free boundary, so its square
    root is close to linear there.  A least-squares line through the last
    ``fit`` domain nodes behind the link locates the boundary; right at the
    free boundary the O(h^2) solver error is as large as the gap itself, and
    the wider fit damps it.  With fewer domain nodes the last two are used.
    The boundary may land up to ``reach`` cells past the last domain node,
    since a contact flag on the next node only says its gap is below the
    solver error.
    """
    root = np.sqrt(np.maximum(gap, 0.0))
    m = np.moveaxis(mask, axis, 0)
    r = np.moveaxis(root, axis, 0)
    d = np.moveaxis(dens * own, axis, 0)
    x = -h * np.arange(fit)
    xc = x - x.mean()
    total = 0.0
    for step in (1, -1):
        # the link runs from the last domain node to the contact node q
        q = _shifted(m, -step, False)
        link = m & ~q
        rows = [_shifted(r, k * step, 0.0) for k in range(fit)]
        inside = [_shifted(m, k * step, False) for k in range(fit)]
        full = np.logical_and.reduce(inside)
        rbar = sum(rows) / fit
        slope = sum(c * rk for c, rk in zip(xc, rows)) / np.sum(xc ** 2)
        slope2 = (rows[0] - rows[1]) / h
        with np.errstate(divide="ignore", invalid="ignore"):
            dist = np.where(full & (slope < 0), x.mean() - rbar / slope,
                            np.where(inside[1] & (slope2 < 0), -rows[0] / slope2, 0.5 * h))
        dist = np.clip(dist, 0.0, reach * h)
        # beyond the cell face the domain eats into the contact cell, short of it the contact eats in
        shift = dist - 0.5 * h
        dq = _shifted(d, -step, 0.0)
        moved = np.where(shift > 0, shift * dq, shift * d) * h
        total += float(np.sum(np.where(link & np.isfinite(moved), moved, 0.0)))
    return total


def subcell_mass(e, mask, phi: GlobalFunction) -> float:
    """Mass of Omega_t with the free boundary located inside grid cells.

    Averages the row-wise and column-wise link corrections added to the
    node-indicator quadrature.
    """
    grid = e.grid
    dens = ddc_density(phi)
    base = integrate(dens, mask)
    corr = 0.0
    for c in CHARTS:
        gap = e.obstacle[c] - e.v.chart(c)
        dc = np.where(np.isfinite(dens.chart(c)), dens.chart(c), 0.0)
        sel = mask[c] & grid.active
        for axis in (0, 1):
            corr += 0.5 * _link_correction(np.where(np.isfinite(gap), gap, 0.0), dc, sel, grid.own[c], grid.h, axis)
    return base + corr


def _glued_graph(grid: P1Grid, mask):
    """Adjacency over owned nodes in ``mask``: 4-neighbour edges plus overlap gluing."""
    n = grid.n
    offs = {Z: 0, W: n * n}
    rows, cols = [], []
    node_sel = {}
    for c in CHARTS:
        sel = mask[c] & (grid.own[c] > 0)
        node_sel[c] = sel
        idx = np.arange(n * n).reshape(n, n) + offs[c]
        for a, b in (((slice(1, None), slice(None)), (slice(None, -1), slice(None))),
                     ((slice(None), slice(1, None)), (slice(None), slice(None, -1)))):
            both = sel[a] & sel[b]
            rows.append(idx[a][both])
            cols.append(idx[b][both])
    band = {c: node_sel[c] & (np.abs(grid.abs - 1.0) <= 2 * grid.h) for c in CHARTS}
    for c in CHARTS:
        i, j = _nearest_image_index(grid, band[c])
        src = np.flatnonzero(band[c].ravel()) + offs[c]
        ok = node_sel[other(c)][i, j]
        rows.append(src[ok])
        cols.append(i[ok] * n + j[ok] + offs[other(c)])
    r = np.concatenate(rows)
    cc = np.concatenate(cols)
    adj = coo_matrix((np.ones(r.size), (r, cc)), shape=(2 * n * n, 2 * n * n))
    present = np.concatenate([node_sel[Z].ravel(), node_sel[W].ravel()])
    return adj, present


def count_components(grid: P1Grid, mask) -> int:
    adj, present = _glued_graph(grid, mask)
    if not present.any():
        return 0
    _, labels = connected_components(adj, directed=False)
    return int(np.unique(labels[present]).size)


def topology(grid: P1Grid, mask):
    """(components of the domain, components of its complement, simply connected flag).

    The flag is None when it does not apply (empty complement, or the domain
    contains the W-origin and so is not a subset of C_z).
    """
    for c in CHARTS:
        edge = np.zeros_like(mask[c])
        edge[[0, -1], :] = True
        edge[:, [0, -1]] = True
        if (mask[c] & edge & (grid.own[c] > 0)).any():
            raise ResolutionError("domain touches the chart grid boundary")
    comp = {c: ~mask[c] for c in CHARTS}
    nd = count_components(grid, mask)
    nc = count_components(grid, comp)
    in_cz = not mask[W][grid.center, grid.center]
    flag = None if (nc == 0 or not in_cz) else bool(nd == 1 and nc == 1)
    return nd, nc, flag


@dataclass
class HeleShawFamily:
    t_grid: np.ndarray
    domains: list
    masses: np.ndarray
    components: list = field(default_factory=list)


def nesting_violations_beyond_one_cell(grid: P1Grid, family: HeleShawFamily):
    """Nodes in Omega_t \\ Omega_t' that are more than one cell from Omega_t'."""
    worst = 0
    for a, b in zip(family.domains, family.domains[1:]):
        for c in CHARTS:
            grown = ndimage.binary_dilation(b[c], structure=np.ones((3, 3), bool))
            bad = a[c] & ~grown & (grid.own[c] > 0)
            worst = max(worst, int(bad.sum()))
    return worst


def build_family(envelopes, phi: GlobalFunction, with_topology=False):
    domains = [extract_domain(e, phi) for e in envelopes]
    masses = np.array([subcell_mass(e, d, phi) for e, d in zip(envelopes, domains)])
    comps = [topology(phi.grid, d) for d in domains] if with_topology else []
    return HeleShawFamily(np.array([e.t for e in envelopes]), domains, masses, comps)


def contours(e, phi: GlobalFunction, level=None):
    """Boundary polylines of Omega_t in z-coordinates (marching squares on psi_t - phi)."""
    grid = e.grid
    level = -e.contact_tol if level is None else level
    lines = []
    for c in CHARTS:
        with np.errstate(invalid="ignore"):
            f = e.psi.full(c) - phi.chart(c)
        f = np.where(np.isfinite(f), f, -1e3)
        for poly in measure.find_contours(f, level):
            pts = (-grid.R + grid.h * poly[:, 0]) + 1j * (-grid.R + grid.h * poly[:, 1])
            keep = np.abs(pts) <= 1.0 if c == Z else (np.abs(pts) < 1.0) & (pts != 0)
            if keep.sum() < 2:
                continue
            pts = pts[keep]
            lines.append(pts if c == Z else 1.0 / pts)
    return lines


def contours_csv(family_lines, fh=None):
    """Write ``[(t, [polyline, ...]), ...]`` as CSV rows t,k,re,im."""
    fh = fh or io.StringIO()
    wr = csv.writer(fh)
    wr.writerow(["t", "k", "re", "im"])
    for t, lines in family_lines:
        for k, line in enumerate(lines):
            for p in line:
                wr.writerow([repr(float(t)), k, repr(float(p.real)), repr(float(p.imag))])
    return fh
