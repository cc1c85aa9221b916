"""The Riemann map of the unit disc onto the doubly slit plane and the
regions A_r = f(D_r), S built from it.

For the arc [-1, 1] in the w-chart, C_z minus the arc is the plane slit along
(-inf, -1] and [1, inf); ``f(tau) = 2 tau / (1 + tau^2)`` maps D onto it with
f(0) = 0 (the reciprocal of the Joukowski map).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from . import kernels
from .p1geom import CHARTS, W, Z, P1Grid

BOUNDARY_SAMPLES = 4096
SAFETY_MARGIN = 3


class ConformalError(ValueError):
    pass


def riemann_map(tau):
    """f(tau) = 2 tau / (1 + tau^2) on the open unit disc."""
    tau = np.asarray(tau, complex)
    if np.any(np.abs(tau) >= 1.0):
        raise ConformalError("riemann_map is defined on |tau| < 1 only")
    out = 2.0 * tau / (1.0 + tau * tau)
    return out if out.ndim else complex(out)


def _boundary_map(tau):
    """f without the domain check (used on circles of radius <= 1)."""
    tau = np.asarray(tau, complex)
    return 2.0 * tau / (1.0 + tau * tau)


def inverse_map(z):
    """Inverse branch on the slit plane: (1 - sqrt(1 - z^2)) / z, principal root.

    Evaluated as z / (1 + sqrt(1 - z^2)), which has no cancellation near 0.
    """
    z = np.asarray(z, complex)
    if np.any((np.abs(z.imag) == 0) & (np.abs(z.real) >= 1)):
        raise ConformalError("point on a slit")
    out = z / (1.0 + np.sqrt(1.0 - z * z))
    return out if out.ndim else complex(out)


def winding_number(curve, points):
    """Winding number of the closed polyline ``curve`` around each point."""
    curve = np.asarray(curve, complex)
    pts = np.asarray(points, complex).ravel()
    closed = np.append(curve, curve[0])
    out = np.zeros(pts.size)
    # chunk to bound memory: (chunk x samples) complex ratios
    step = max(1, 2_000_000 // closed.size)
    for a in range(0, pts.size, step):
        p = pts[a:a + step, None]
        d = closed[None, :] - p
        with np.errstate(divide="ignore", invalid="ignore"):
            ang = np.angle(d[:, 1:] / d[:, :-1])
        out[a:a + step] = ang.sum(axis=1) / (2.0 * np.pi)
    return np.rint(out).astype(int).reshape(np.shape(points))


def boundary_polyline(r, samples=BOUNDARY_SAMPLES):
    """theta -> f(r e^{i theta}) sampled at ``samples`` points (z-coordinates)."""
    if not 0.0 < r < 1.0:
        raise ConformalError("radius must lie in (0, 1)")
    theta = 2.0 * np.pi * np.arange(samples) / samples
    return _boundary_map(r * np.exp(1j * theta))


def in_A(r, zpoints, samples=BOUNDARY_SAMPLES):
    """Membership of z-points (np.inf allowed) in A_r = f(D_r).

    Crossing parity against the boundary polyline; for this simple curve it
    equals the winding number test.
    """
    zp = np.asarray(zpoints, complex)
    finite = np.isfinite(zp)
    out = np.zeros(zp.shape, bool)
    curve = boundary_polyline(r, samples)
    # A_r lies in the disc of radius max|f| on the circle; skip the far field
    near = finite & (np.abs(zp) <= np.abs(curve).max() * (1 + 1e-9))
    if near.any():
        out[near] = kernels.points_in_polygon(curve, zp[near]).reshape(zp[near].shape)
    return out


def verify_biholomorphism(n_samples=64, radius=0.95, slit_tol=1e-9):
    """Sampled checks that the closed form is a biholomorphism D -> C minus the slits."""
    x = np.linspace(-radius, radius, n_samples)
    net = (x[:, None] + 1j * x[None, :]).ravel()
    net = net[np.abs(net) < radius]
    img = riemann_map(net)
    pts = np.column_stack([img.real, img.imag])
    spacing = 2.0 * radius / (n_samples - 1)
    # |f'| >= 2(1 - r^2)/(1 + r^2)^2 on D_r bounds how close distinct images can be
    lower = 2 * (1 - radius ** 2) / (1 + radius ** 2) ** 2
    pairs = cKDTree(pts).query_pairs(0.25 * lower * spacing)
    on_slit = (np.abs(img.imag) <= slit_tol) & (np.abs(img.real) >= 1.0)
    windings = {}
    for r in (0.3, 0.6, 0.9):
        curve = boundary_polyline(r)
        inside = net[np.abs(net) < r - 2 * spacing]
        outside = net[np.abs(net) > r + 2 * spacing]
        win_in = winding_number(curve, riemann_map(inside))
        win_out = winding_number(curve, riemann_map(outside)) if outside.size else np.zeros(0, int)
        windings[r] = (bool(np.all(win_in == 1)), bool(np.all(win_out == 0)))
    report = {
        "samples": int(net.size),
        "collisions": len(pairs),
        "slit_hits": int(on_slit.sum()),
        "f0": complex(riemann_map(0.0)),
        "winding_inside_is_one": all(v[0] for v in windings.values()),
        "winding_outside_is_zero": all(v[1] for v in windings.values()),
    }
    report["passed"] = bool(report["collisions"] == 0 and report["slit_hits"] == 0 and report["f0"] == 0
                            and report["winding_inside_is_one"] and report["winding_outside_is_zero"])
    return report


def is_simple(curve, rel_tol=0.25):
    """No two non-adjacent samples closer than ``rel_tol`` times the smallest step."""
    curve = np.asarray(curve, complex)
    steps = np.abs(np.diff(np.append(curve, curve[0])))
    tree = cKDTree(np.column_stack([curve.real, curve.imag]))
    m = curve.size
    for i, j in tree.query_pairs(rel_tol * steps.min()):
        if min(abs(i - j), m - abs(i - j)) > 1:
            return False
    return True


def nesting_holds(radii, samples=1024):
    """A_r inside A_r' for consecutive radii (boundary of the smaller inside the larger)."""
    radii = sorted(radii)
    for a, b in zip(radii, radii[1:]):
        if not np.all(in_A(b, boundary_polyline(a, samples))):
            return False
    return True


def query_points(grid: P1Grid, chart, scale):
    """z-values (np.inf at w = 0) of ``scale * z`` for every node of ``chart``."""
    c = grid.coords
    if chart == Z:
        return scale * c
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(c == 0, np.inf, scale / np.where(c == 0, 1.0, c))


def predicted_S_mask(tau_radius, grid: P1Grid, margin=SAFETY_MARGIN):
    """Nodes z (both charts) with tau z in the open complement of A_|tau|, eroded.

    tau is taken real and positive; S only depends on tau z and |tau|.
    """
    r = float(tau_radius)
    if not 0.0 < r < 1.0:
        raise ConformalError("tau_radius must lie in (0, 1)")
    out = {}
    for c in CHARTS:
        q = query_points(grid, c, r)
        inside = in_A(r, q)
        m = ~inside
        if margin:
            m = ndimage.binary_erosion(m, structure=np.ones((3, 3), bool), iterations=margin, border_value=1)
        out[c] = m
    return out


def A_complement_mask(tau_radius, grid: P1Grid, margin=SAFETY_MARGIN):
    """Nodes z with z itself outside A_r (no rescaling), eroded."""
    r = float(tau_radius)
    out = {}
    for c in CHARTS:
        m = ~in_A(r, query_points(grid, c, 1.0))
        if margin:
            m = ndimage.binary_erosion(m, structure=np.ones((3, 3), bool), iterations=margin, border_value=1)
        out[c] = m
    return out


def A_mask(tau_radius, grid: P1Grid):
    return {c: in_A(tau_radius, query_points(grid, c, 1.0)) for c in CHARTS}


def polylines_csv(rows, fh=None):
    """Write ``[(r, [polyline, ...]), ...]`` as CSV rows r,k,re,im."""
    fh = fh or io.StringIO()
    wr = csv.writer(fh)
    wr.writerow(["r", "k", "re", "im"])
    for r, lines in rows:
        for k, line in enumerate(lines):
            for p in line:
                wr.writerow([repr(float(r)), k, repr(float(p.real)), repr(float(p.imag))])
    return fh


@dataclass(frozen=True)
class SlitPlaneMap:
    """The closed-form map with its slit metadata."""

    slits: tuple = ((-np.inf, -1.0), (1.0, np.inf))

    def __call__(self, tau):
        return riemann_map(tau)

    def inverse(self, z):
        return inverse_map(z)

    def boundary(self, r, samples=BOUNDARY_SAMPLES):
        return boundary_polyline(r, samples)
