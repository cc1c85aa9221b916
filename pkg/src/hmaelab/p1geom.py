"""Two-chart finite-difference model of the Riemann sphere.

P^1 is covered by the charts ``Z`` (coordinate z) and ``W`` (w = 1/z).
Each chart carries a square grid on [-R, R]^2 with an odd node count so the
chart origin is a node.  Nodes with |coord| <= ``ACTIVE_RADIUS`` are the
chart's own unknowns; the remaining nodes are ghosts, filled by bilinear
interpolation from the other chart at 1/coord.

The dd^c operator is normalised so that dd^c log|z|^2 = delta_0, which in a
chart means dd^c = Laplacian / (4 pi) against Lebesgue measure.  With that
convention the Fubini-Study form has density (1/pi)(1+|z|^2)^-2 and total
mass one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import ndimage

Z = "Z"
W = "W"
CHARTS = (Z, W)

ACTIVE_RADIUS = 2.0
SENTINEL = -1.0e300
_OWN_SUBSAMPLES = 16


def _lagrange4(a):
    """Cubic Lagrange weights on nodes -1, 0, 1, 2 at offset ``a`` in [0, 1)."""
    a = np.asarray(a, float)[..., None]
    k = np.arange(-1, 3)
    w = np.ones(a.shape[:-1] + (4,))
    for m in range(-1, 3):
        sel = k != m
        w[..., sel] *= (a - m) / (k[sel] - m)
    return w


class ChartInfinityError(ValueError):
    """Raised when a chart origin is sent to the other chart."""


class ChartConsistencyError(ValueError):
    """Raised when data on the two charts disagree on the overlap."""


def other(chart):
    return W if chart == Z else Z


@dataclass(frozen=True)
class ChartPoint:
    chart: str
    coord: complex


def transition(p: ChartPoint) -> ChartPoint:
    """Express the same point of P^1 in the other chart (w = 1/z)."""
    if p.coord == 0:
        raise ChartInfinityError(f"{p.chart}-origin is the point at infinity of chart {other(p.chart)}")
    return ChartPoint(other(p.chart), 1.0 / complex(p.coord))


def fs_density(p) -> float:
    """Lebesgue density of the Fubini-Study form at a chart point (or complex array)."""
    c = p.coord if isinstance(p, ChartPoint) else p
    return 1.0 / (np.pi * (1.0 + np.abs(c) ** 2) ** 2)


def zeta_chart(coord, chart):
    """The Green potential log(|z|^2/(1+|z|^2)) in chart coordinates.

    Returns -inf at the Z-chart origin.  In the W chart this is -log(1+|w|^2).
    """
    a2 = np.abs(coord) ** 2
    if chart == W:
        return -np.log1p(a2)
    with np.errstate(divide="ignore"):
        return np.log(a2) - np.log1p(a2)


@dataclass(frozen=True)
class ChartGrid:
    """Values of a function on one chart grid."""

    chart: str
    R: float
    n: int
    values: np.ndarray

    def __post_init__(self):
        if self.n % 2 == 0 or self.n < 5:
            raise ValueError("n must be odd and >= 5")
        if self.R < 2:
            raise ValueError("R must be >= 2 for the charts to overlap")
        if self.values.shape != (self.n, self.n):
            raise ValueError(f"values must be {self.n}x{self.n}")

    @property
    def h(self):
        return 2.0 * self.R / (self.n - 1)


class P1Grid:
    """Geometry shared by every function living on the pair of chart grids.

    Instances are cached per ``(R, n)``; use :func:`p1grid`.
    """

    def __init__(self, R: float = 4.0, n: int = 257, ghost_order: int = 1):
        if n % 2 == 0 or n < 5:
            raise ValueError("n must be odd and >= 5")
        if R < 2:
            raise ValueError("R must be >= 2 for the charts to overlap")
        self.R = float(R)
        self.n = int(n)
        if ghost_order not in (1, 3):
            raise ValueError("ghost_order must be 1 or 3")
        self.ghost_order = ghost_order
        self.h = 2.0 * self.R / (self.n - 1)
        x = -self.R + self.h * np.arange(self.n)
        self.axis = x
        self.coords = x[:, None] + 1j * x[None, :]
        self.abs = np.abs(self.coords)
        self.center = (self.n - 1) // 2
        self.active = self.abs <= ACTIVE_RADIUS
        self.fs = fs_density(self.coords)
        self.own = {Z: self._ownership(Z), W: self._ownership(W)}
        self.ghost_map = self._ghost_map()

    # -- ownership -----------------------------------------------------------
    def _ownership(self, chart):
        """Fraction of each node's cell owned by this chart.

        Z owns |z| <= 1, W owns |w| < 1; cells cut by the unit circle are
        weighted by their sub-sampled area fraction.
        """
        h = self.h
        wgt = (self.abs <= 1.0).astype(float)
        band = np.abs(self.abs - 1.0) <= h
        k = _OWN_SUBSAMPLES
        off = (np.arange(k) + 0.5) / k - 0.5
        sub = (off[:, None] + 1j * off[None, :]).ravel() * h
        pts = self.coords[band][:, None] + sub[None, :]
        frac = (np.abs(pts) <= 1.0).mean(axis=1)
        wgt[band] = frac
        return wgt

    def node_area(self):
        return self.h * self.h

    # -- interpolation -------------------------------------------------------
    def fractional_index(self, coord):
        """Continuous (i, j) grid index of chart coordinates."""
        c = np.asarray(coord)
        return (c.real + self.R) / self.h, (c.imag + self.R) / self.h

    def bilinear_stencil(self, coord):
        """Flat indices (..., 4) and weights (..., 4) of the bilinear stencil."""
        fi, fj = self.fractional_index(coord)
        i0 = np.clip(np.floor(fi).astype(np.int64), 0, self.n - 2)
        j0 = np.clip(np.floor(fj).astype(np.int64), 0, self.n - 2)
        a = fi - i0
        b = fj - j0
        idx = np.stack([i0 * self.n + j0, (i0 + 1) * self.n + j0, i0 * self.n + j0 + 1, (i0 + 1) * self.n + j0 + 1], axis=-1)
        wts = np.stack([(1 - a) * (1 - b), a * (1 - b), (1 - a) * b, a * b], axis=-1)
        return idx, wts

    def cubic_stencil(self, coord):
        """Flat indices (..., 16) and weights (..., 16) of tensor cubic Lagrange interpolation."""
        fi, fj = self.fractional_index(coord)
        i0 = np.clip(np.floor(fi).astype(np.int64), 1, self.n - 3)
        j0 = np.clip(np.floor(fj).astype(np.int64), 1, self.n - 3)
        wi = _lagrange4(fi - i0)
        wj = _lagrange4(fj - j0)
        off = np.arange(-1, 3)
        ii = i0[..., None, None] + off[:, None]
        jj = j0[..., None, None] + off[None, :]
        idx = (ii * self.n + jj).reshape(*np.shape(fi), 16)
        wts = (wi[..., :, None] * wj[..., None, :]).reshape(*np.shape(fi), 16)
        return idx, wts

    def interpolate(self, values, coord, order=1):
        """Interpolate chart ``values`` at chart coordinates ``coord``."""
        coord = np.asarray(coord, dtype=complex)
        if order == 1:
            idx, wts = self.bilinear_stencil(coord)
            return (values.ravel()[idx] * wts).sum(axis=-1)
        fi, fj = self.fractional_index(coord)
        out = ndimage.map_coordinates(values, [fi.ravel(), fj.ravel()], order=order, mode="nearest", prefilter=True)
        return out.reshape(coord.shape)

    def _ghost_map(self):
        """For every ghost node: flat target index, source indices and weights.

        Sources live in the other chart; identical layout for both charts.
        """
        tgt = np.flatnonzero(~self.active.ravel())
        img = 1.0 / self.coords.ravel()[tgt]
        idx, wts = self.cubic_stencil(img) if self.ghost_order == 3 else self.bilinear_stencil(img)
        return tgt, idx, wts

    def sync_ghosts(self, vz, vw):
        """Fill ghost nodes of both charts in place from the other chart."""
        tgt, idx, wts = self.ghost_map
        fz = vz.reshape(-1)
        fw = vw.reshape(-1)
        fz[tgt] = (fw[idx] * wts).sum(axis=1)
        fw[tgt] = (fz[idx] * wts).sum(axis=1)

    def overlap_nodes(self):
        """Active nodes with 1/2 <= |coord| <= 2 (their images are active too)."""
        return self.active & (self.abs >= 1.0 / ACTIVE_RADIUS)

    def owner(self, zpoints):
        """Split P^1 points given as z values (np.inf allowed) by owning chart.

        Returns ``(in_z, coord_z, coord_w)`` where ``coord_w = 1/z`` for points
        owned by W.
        """
        zp = np.asarray(zpoints, dtype=complex)
        in_z = np.abs(zp) <= 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            wc = np.where(in_z, 0, 1.0 / np.where(in_z, 1, zp))
        return in_z, np.where(in_z, zp, 0), wc


@lru_cache(maxsize=8)
def p1grid(R: float = 4.0, n: int = 257, ghost_order: int = 1) -> P1Grid:
    return P1Grid(R, n, ghost_order)


@dataclass(frozen=True)
class GlobalFunction:
    """A function on P^1 stored on both chart grids.

    The stored arrays are the *regular part*; the represented function is
    ``pole * zeta + regular`` where zeta is the Green potential
    log(|z|^2/(1+|z|^2)).  A positive pole makes the Z-origin a masked
    singular node (value -inf, stored as ``SENTINEL`` in dumps).
    """

    grid: P1Grid
    z: np.ndarray
    w: np.ndarray
    pole: float = 0.0
    consistency_tol: float | None = None

    def __post_init__(self):
        shape = (self.grid.n, self.grid.n)
        if self.z.shape != shape or self.w.shape != shape:
            raise ValueError("chart arrays do not match the grid")
        if self.consistency_tol is None:
            object.__setattr__(self, "consistency_tol", 10.0 * self.grid.h ** 2)

    @classmethod
    def from_callable(cls, grid, fz, fw, pole=0.0, **kw):
        """Sample chart expressions ``fz(z)`` and ``fw(w)`` of the regular part."""
        return cls(grid, np.asarray(fz(grid.coords), float), np.asarray(fw(grid.coords), float), pole, **kw)

    def chart(self, c):
        return self.z if c == Z else self.w

    def mask(self, c):
        """Masked singular nodes of chart ``c``."""
        m = np.zeros((self.grid.n, self.grid.n), bool)
        if c == Z and self.pole > 0:
            m[self.grid.center, self.grid.center] = True
        return m

    def full(self, c):
        """Represented values in chart ``c`` (``-inf`` at masked nodes)."""
        reg = self.chart(c)
        if self.pole == 0:
            return reg
        with np.errstate(invalid="ignore"):
            return self.pole * zeta_chart(self.grid.coords, c) + reg

    def as_chart_grids(self):
        g = self.grid
        out = []
        for c in CHARTS:
            vals = self.full(c).copy()
            vals[self.mask(c)] = SENTINEL
            out.append(ChartGrid(c, g.R, g.n, vals))
        return tuple(out)

    def consistency_error(self):
        """Worst mismatch between the charts on the overlap annulus.

        Returns ``(error, chart, (i, j))`` of the worst node.
        """
        g = self.grid
        ov = g.overlap_nodes()
        worst = (0.0, Z, (0, 0))
        for c in CHARTS:
            mine = self.chart(c)
            theirs = self.chart(other(c))
            img = 1.0 / g.coords[ov]
            diff = np.abs(mine[ov] - g.interpolate(theirs, img))
            k = int(np.argmax(diff))
            if diff[k] > worst[0]:
                ij = np.argwhere(ov)[k]
                worst = (float(diff[k]), c, (int(ij[0]), int(ij[1])))
        return worst

    def check_consistency(self):
        err, c, ij = self.consistency_error()
        if err > self.consistency_tol:
            raise ChartConsistencyError(f"chart mismatch {err:.3e} > {self.consistency_tol:.3e} at {c}{ij}")
        return err

    def evaluate(self, zpoints, order=1):
        """Values at P^1 points given as z (``np.inf`` for the W origin)."""
        g = self.grid
        zp = np.asarray(zpoints, dtype=complex)
        in_z, cz, cw = g.owner(zp)
        out = np.empty(zp.shape)
        if in_z.any():
            out[in_z] = g.interpolate(self.z, cz[in_z], order)
            if self.pole:
                with np.errstate(divide="ignore", invalid="ignore"):
                    out[in_z] += self.pole * zeta_chart(cz[in_z], Z)
        if (~in_z).any():
            out[~in_z] = g.interpolate(self.w, cw[~in_z], order)
            if self.pole:
                out[~in_z] += self.pole * zeta_chart(cw[~in_z], W)
        return out

    def __add__(self, other_fn):
        return GlobalFunction(self.grid, self.z + other_fn.z, self.w + other_fn.w, self.pole + other_fn.pole)

    def __sub__(self, other_fn):
        return GlobalFunction(self.grid, self.z - other_fn.z, self.w - other_fn.w, self.pole - other_fn.pole)


@dataclass(frozen=True)
class CurrentDensity:
    """Lebesgue density of omega_FS + dd^c u on both charts plus a point mass at z = 0.

    Nodes where the density is undefined (grid edge, masked singular nodes)
    hold NaN.
    """

    grid: P1Grid
    z: np.ndarray
    w: np.ndarray
    atom_mass_at_origin: float = 0.0

    def chart(self, c):
        return self.z if c == Z else self.w

    def min(self):
        return float(min(np.nanmin(self.z[self.grid.active]), np.nanmin(self.w[self.grid.active])))


def laplacian5(values, h):
    """Five-point Laplacian; NaN on the square's edge."""
    out = np.full(values.shape, np.nan)
    out[1:-1, 1:-1] = (
        values[2:, 1:-1] + values[:-2, 1:-1] + values[1:-1, 2:] + values[1:-1, :-2] - 4.0 * values[1:-1, 1:-1]
    ) / (h * h)
    return out


def ddc_density(u: GlobalFunction) -> CurrentDensity:
    """Density of omega_FS + dd^c u; the pole goes to the atom at the origin."""
    g = u.grid
    dens = {}
    for c in CHARTS:
        d = (1.0 - u.pole) * g.fs + laplacian5(u.chart(c), g.h) / (4.0 * np.pi)
        d[u.mask(c)] = np.nan
        dens[c] = d
    return CurrentDensity(g, dens[Z], dens[W], float(u.pole))


def full_mask(grid, value=True):
    """Region mask covering all (or none) of P^1."""
    m = np.full((grid.n, grid.n), bool(value))
    return {Z: m.copy(), W: m.copy()}


def check_mask_consistency(grid: P1Grid, region):
    """Raise if a node of the ownership band disagrees with every node of its image stencil.

    Away from the band only the owning chart is counted, so thin features
    that the other chart cannot resolve are allowed there.
    """
    band = np.abs(grid.abs - 1.0) <= grid.h
    for c in CHARTS:
        counted = band & (grid.own[c] > 0)
        if not counted.any():
            continue
        img = 1.0 / grid.coords[counted]
        idx, _ = grid.bilinear_stencil(img)
        theirs = region[other(c)].ravel()[idx]
        mine = region[c][counted]
        bad = np.all(theirs != mine[:, None], axis=1)
        if bad.any():
            ij = np.argwhere(counted)[np.argmax(bad)]
            raise ChartConsistencyError(f"region mask inconsistent at overlap node {c}({ij[0]}, {ij[1]})")


def integrate(c: CurrentDensity, region) -> float:
    """Mass of ``region`` (dict chart -> bool mask) under the current ``c``.

    Each point of P^1 is counted once through the ownership weights; the
    origin atom counts when the Z-origin node is in the region.
    """
    g = c.grid
    check_mask_consistency(g, region)
    total = 0.0
    for ch in CHARTS:
        dens = c.chart(ch)
        m = region[ch] & (g.own[ch] > 0) & np.isfinite(dens)
        total += float(np.sum(dens[m] * g.own[ch][m])) * g.h * g.h
    if c.atom_mass_at_origin and region[Z][g.center, g.center]:
        total += c.atom_mass_at_origin
    return total
