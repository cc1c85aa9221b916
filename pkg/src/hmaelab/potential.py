"""The explicit boundary potential with a contact arc on [-1, 1] in the w-chart.

On C_w the potential is ``max_delta(eps*u, log(1+|w|^2) - C) - log(1+|w|^2)``
with ``u(w) = alpha(|w|^2) + Im(w)^2``; it equals the constant ``-C`` beyond
the middle radius and is continued by that constant to the rest of P^1.

The default radii and smoothing are wider than the textbook choice (2, 3, 4)
with a narrow regularised maximum: that choice packs most of the mass of
omega_FS + dd^c phi into a ring thinner than a grid cell, and the free
boundaries of the envelopes cannot be located there at desk resolution.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import PPoly

from .p1geom import CHARTS, W, Z, GlobalFunction, P1Grid, ddc_density, laplacian5

log = logging.getLogger(__name__)


class PotentialValidationError(ValueError):
    pass


@dataclass(frozen=True)
class BumpProfile:
    """Convex, non-decreasing C^2 spline vanishing on (-inf, 1].

    alpha'' is a hat of height ``slope / width`` supported on
    [1, 1 + 2 width], so alpha is cubic near 1 and affine with slope
    ``slope`` beyond ``1 + 2 width``.
    """

    width: float = 0.5
    slope: float = 1.0

    @property
    def spline(self) -> PPoly:
        b, peak = self.width, self.slope / self.width
        knots = np.array([0.0, 1.0, 1.0 + b, 1.0 + 2 * b, 2.0 + 2 * b])
        # alpha'' per piece, local variable x - knot: c1 * x + c0
        c = np.array([[0.0, peak / b, -peak / b, 0.0], [0.0, 0.0, peak, 0.0]])
        return PPoly(c, knots).antiderivative(2)

    @property
    def knots(self):
        return self.spline.x

    @property
    def coefficients(self):
        return self.spline.c

    def __call__(self, t, nu=0):
        t = np.asarray(t, float)
        sp = self.spline.derivative(nu) if nu else self.spline
        out = sp(np.maximum(t, 0.0))
        return np.where(t <= 1.0, 0.0, out)


def reg_abs(t):
    """Even C^2 convex function equal to |t| for |t| >= 1."""
    t = np.asarray(t, float)
    inner = (-(t ** 4) + 6.0 * t ** 2 + 3.0) / 8.0
    return np.where(np.abs(t) >= 1.0, np.abs(t), inner)


@dataclass(frozen=True)
class RegMax:
    delta: float = 0.6

    def __call__(self, a, b):
        return max_delta(a, b, self)


def max_delta(a, b, p: RegMax):
    """Regularised maximum; returns exactly ``a`` when a > b + delta (and symmetrically)."""
    d = p.delta
    if d <= 0:
        raise ValueError("delta must be positive")
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    return 0.5 * (d * reg_abs((a - b) / d) + a + b)


@dataclass(frozen=True)
class Radii:
    """Discs of the construction: eps*u dominates on D_inner, the log term on D_outer minus D_middle."""

    inner: float = 1.1
    middle: float = 3.5
    outer: float = 3.9


@dataclass(frozen=True)
class ExampleConstants:
    epsilon: float
    C: float
    delta: float
    margin: float
    alpha: BumpProfile = field(default_factory=BumpProfile)
    radii: Radii = field(default_factory=Radii)


def u_value(w, alpha: BumpProfile | None = None):
    """alpha(|w|^2) + Im(w)^2: strictly subharmonic, zero exactly on [-1, 1]."""
    alpha = alpha or BumpProfile()
    w = np.asarray(w, complex)
    return alpha(np.abs(w) ** 2) + w.imag ** 2


def _inequality_slack(eps, C, margin, w, alpha, radii=Radii()):
    """(worst slack of the inner inequality, worst slack of the outer one) over the nodes ``w``."""
    a2 = np.abs(w) ** 2
    u = u_value(w, alpha)
    lg = np.log1p(a2)
    inner = a2 <= radii.inner ** 2
    outer = (a2 >= radii.middle ** 2) & (a2 <= radii.outer ** 2)
    s1 = eps * u[inner] - (lg[inner] - C + margin)
    s2 = (lg[outer] - C - margin) - eps * u[outer]
    return float(s1.min()), float(s2.min())


def select_constants(grid: P1Grid, delta=0.6, margin=0.7, alpha: BumpProfile | None = None, radii: Radii = Radii()) -> ExampleConstants:
    """Deterministic choice of (epsilon, C, delta) checked on the w-chart nodes.

    C is set so that the inner inequality holds for every epsilon >= 0; epsilon
    is 0.9 of the largest value the outer inequality admits node-wise.
    """
    alpha = alpha or BumpProfile()
    if grid.R < radii.outer:
        raise ValueError(f"grid must cover D_{radii.outer:g}")
    margin = 2.0 * delta if margin is None else margin
    if margin <= delta:
        raise ValueError("margin must exceed delta for exact selection")
    w = grid.coords
    a2 = np.abs(w) ** 2
    C = float(np.log1p(a2[a2 <= radii.inner ** 2]).max() + margin)
    outer = (a2 >= radii.middle ** 2) & (a2 <= radii.outer ** 2)
    ratio = (np.log1p(a2[outer]) - C - margin) / u_value(w[outer], alpha)
    eps = min(1.0, 0.9 * float(ratio.min()))
    if eps <= 0:
        k = int(np.argmin(ratio))
        raise PotentialValidationError(f"no admissible epsilon; outer inequality fails at w={w[outer][k]:.4g}")
    s1, s2 = _inequality_slack(eps, C, margin, w, alpha, radii)
    if s1 < 0 or s2 < 0:
        raise PotentialValidationError(f"constant search failed (slacks {s1:.3e}, {s2:.3e})")
    log.info("constants: epsilon=%.6g C=%.6g delta=%g margin=%g", eps, C, delta, margin)
    return ExampleConstants(eps, C, float(delta), float(margin), alpha, radii)


def phi_w(w, k: ExampleConstants):
    """The potential in the w-chart."""
    w = np.asarray(w, complex)
    lg = np.log1p(np.abs(w) ** 2)
    v = max_delta(k.epsilon * u_value(w, k.alpha), lg - k.C, RegMax(k.delta))
    return np.where(np.abs(w) <= k.radii.outer, v - lg, -k.C)


def phi_z(z, k: ExampleConstants):
    """The potential in the z-chart (constant -C near z = 0)."""
    z = np.asarray(z, complex)
    safe = np.where(z == 0, 1.0, z)
    return np.where(z == 0, -k.C, phi_w(1.0 / safe, k))


def build_phi(grid: P1Grid, k: ExampleConstants, check=True) -> GlobalFunction:
    """The potential on both charts."""
    phi = GlobalFunction(grid, phi_z(grid.coords, k), phi_w(grid.coords, k))
    if check:
        phi.check_consistency()
    return phi


def hausdorff_to_segment(points, a=-1.0, b=1.0, samples=2001):
    """Hausdorff distance between a finite point set and the real segment [a, b]."""
    pts = np.asarray(points, complex).ravel()
    if pts.size == 0:
        return np.inf
    x = np.clip(pts.real, a, b)
    d1 = np.abs(pts - x).max()
    seg = np.linspace(a, b, samples)
    d2 = np.abs(seg[:, None] - pts[None, :]).min(axis=1).max()
    return float(max(d1, d2))


def validate_potential(phi: GlobalFunction, k: ExampleConstants | None = None, equality_tol=None, strict=True):
    """Numerical check of the hypotheses on the potential.

    Returns a report dict; raises :class:`PotentialValidationError` naming the
    first failed check when ``strict``.
    """
    g = phi.grid
    dens = ddc_density(phi)
    min_density = dens.min()
    gap = phi.w + np.log1p(g.abs ** 2)
    if equality_tol is None:
        eps = k.epsilon if k is not None else 1.0
        equality_tol = 0.25 * eps * g.h ** 2
    eq = g.active & (gap <= equality_tol)
    haus = hausdorff_to_segment(g.coords[eq])
    lap = np.nanmax(np.abs(np.concatenate([laplacian5(phi.z, g.h)[g.active], laplacian5(phi.w, g.h)[g.active]])))
    checks = [
        {"name": "positive_density", "value": min_density, "passed": bool(min_density > 0)},
        {"name": "lower_bound", "value": float(gap[g.active].min()), "passed": bool(gap[g.active].min() >= -1e-12)},
        {"name": "equality_set_is_arc", "value": haus, "passed": bool(haus <= 2 * g.h)},
        {"name": "bounded_second_differences", "value": float(lap), "passed": bool(np.isfinite(lap))},
    ]
    report = {
        "n": g.n,
        "h": g.h,
        "min_density": min_density,
        "equality_set_hausdorff": haus,
        "equality_tol": equality_tol,
        "oscillation": float(max(np.ptp(phi.z), np.ptp(phi.w))),
        "checks": checks,
    }
    if k is not None:
        s1, s2 = _inequality_slack(k.epsilon, k.C, k.margin, g.coords, k.alpha, k.radii)
        report.update(epsilon=k.epsilon, C=k.C, delta=k.delta, margin=k.margin)
        checks.append({"name": "inner_inequality", "value": s1, "passed": bool(s1 >= 0)})
        checks.append({"name": "outer_inequality", "value": s2, "passed": bool(s2 >= 0)})
    if strict:
        for c in checks:
            if not c["passed"]:
                raise PotentialValidationError(f"check {c['name']} failed (value {c['value']:.4g})")
    return report


def report_json(report) -> str:
    return json.dumps(report, indent=2, sort_keys=True, default=float)
