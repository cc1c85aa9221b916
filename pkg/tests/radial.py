"""Rotation-invariant test potential with closed-form envelopes.

For radial phi the envelope psi_t equals t log r^2 - log(1 + r^2) + c_t on
the disc r < r_t, where the phi-mass of the disc is t, and phi outside; the
constant makes it continuous at r_t.  The geodesic then follows from the
Legendre formula with the exact family.
"""
import numpy as np
from scipy.optimize import brentq

from hmaelab.p1geom import GlobalFunction
from hmaelab.potential import RegMax, max_delta

EPS, C, DELTA, RADIUS = 0.03, 1.3, 0.3, 3.5


def phi_w(w):
    lg = np.log1p(np.abs(w) ** 2)
    return np.where(np.abs(w) <= RADIUS, max_delta(EPS * np.abs(w) ** 2, lg - C, RegMax(DELTA)) - lg, -C)


def phi_of_r(r):
    """phi at |z| = r."""
    return float(phi_w(np.array([1.0 / r + 0j]))[0]) if r > 0 else -C


def phi_on(grid):
    safe = np.where(grid.coords == 0, 1, grid.coords)
    return GlobalFunction(grid, np.where(grid.coords == 0, -C, phi_w(1 / safe)), phi_w(grid.coords))


def disc_mass(r, dr=1e-6):
    """phi-mass of {|z| < r}: r^2/(1+r^2) + r phi'(r) / 2."""
    return r * r / (1 + r * r) + r * (phi_of_r(r + dr) - phi_of_r(r - dr)) / (4 * dr)


def r_t(t):
    return brentq(lambda r: disc_mass(r) - t, 1e-4, 200.0)


def const_t(t, rt=None):
    rt = r_t(t) if rt is None else rt
    return phi_of_r(rt) - t * np.log(rt * rt) + np.log1p(rt * rt)


def psi_exact(t, zabs, phiv):
    """psi_t at |z| = zabs given phi values there (-inf at 0)."""
    rt = r_t(t)
    with np.errstate(divide="ignore"):
        inner = t * np.log(zabs ** 2) - np.log1p(zabs ** 2) + const_t(t, rt)
    return np.where(zabs < rt, inner, phiv)


class ExactGeodesic:
    """tilde_Phi(z, s) = sup_t psi_t - (1 - t) s on a dense t-sample."""

    def __init__(self, ts=None):
        self.ts = np.linspace(0.0005, 0.9995, 2000) if ts is None else np.asarray(ts)
        self.rts = np.array([r_t(t) for t in self.ts])
        self.cs = np.array([const_t(t, rt) for t, rt in zip(self.ts, self.rts)])

    def __call__(self, zabs, s, phiv):
        best = phiv - s
        for t, rt, c in zip(self.ts, self.rts, self.cs):
            with np.errstate(divide="ignore", invalid="ignore"):
                v = np.where(zabs < rt, t * np.log(zabs ** 2) - np.log1p(zabs ** 2) + c, phiv)
            best = np.maximum(best, v - (1 - t) * s)
        return best
