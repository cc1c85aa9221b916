from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hmaelab import conformal, hmae
from hmaelab.envelope import solve_family
from hmaelab.p1geom import CHARTS, W, Z, GlobalFunction, p1grid, zeta_chart

from . import radial

T_GRID = sorted(set(np.r_[np.linspace(0, 1, 17)[1:], 1 - 2.0 ** -np.arange(5, 9)]))


@pytest.fixture(scope="module")
def geo65(example65):
    _, phi = example65
    fam = solve_family(phi, T_GRID)
    return phi, fam, hmae.legendre_build(fam, phi)


def test_s_grid(example65):
    s = hmae.default_s_grid()
    assert s[0] == 0 and s[-1] == hmae.S_MAX and s.size == 41
    assert np.all(np.diff(s) > 0)
    for bad in ([0.5, 1.0], [0.0, 1.0, 1.0]):
        with pytest.raises(hmae.HMAEError):
            hmae.legendre_build([], example65[1], s_grid=bad)


@given(st.floats(1e-3, 1.0))
def test_radius_s_roundtrip(r):
    assert abs(hmae.radius_of_s(hmae.s_of_radius(r)) - r) < 1e-12 * max(1, 1 / r)


def test_s_zero_slice_is_phi(geo65):
    phi, _, g = geo65
    k = g.slice_index(0.0)
    for c in CHARTS:
        assert np.abs(g.tilde[k].chart(c) - phi.chart(c))[g.grid.active].max() <= g.fp_tol
    with pytest.raises(hmae.HMAEError):
        g.slice_index(0.1234)


def test_convex_with_slopes_in_range(geo65):
    rep = hmae.convexity_report(geo65[2])
    assert rep["passed"], rep
    assert rep["min_slope"] >= -1 - rep["tol"] and rep["max_slope"] <= rep["tol"]


def test_affine_family_has_the_closed_form():
    # psi_t = phi - a t gives tilde_Phi = phi - min(s, a)
    g = p1grid(4.0, 17)
    phi = GlobalFunction(g, -np.log1p(g.abs ** 2) * 0.1, -np.log1p(g.abs ** 2) * 0.1)
    a = 1.5
    ts = np.linspace(0.125, 1.0, 8)
    fam = []
    for t in ts:
        with np.errstate(invalid="ignore"):
            v = {c: phi.chart(c) - a * t - t * zeta_chart(g.coords, c) for c in CHARTS}
        fam.append(SimpleNamespace(t=t, v=GlobalFunction(g, v[Z], v[W]), fp_tol=1e-12))
    geo = hmae.legendre_build(fam, phi, s_grid=[0.0, 0.5, 1.5, 3.0])
    sel = g.abs > 0
    for k, s in enumerate(geo.s_grid):
        for c in CHARTS:
            ref = phi.chart(c) - min(s, a)
            assert np.abs(geo.tilde[k].chart(c) - ref)[sel].max() < 1e-12


def test_legendre_inverts(geo65):
    _, fam, g = geo65
    rows = hmae.legendre_invert_check(g, fam)
    assert all(0 < r["t"] < 1 for r in rows)
    assert max(r["error"] for r in rows) < 3e-2
    assert min(r["coverage"] for r in rows) > 0.5


def test_lower_bound_and_psi1_off_A(geo65):
    _, fam, g = geo65
    psi1 = fam[-1].psi
    assert hmae.lower_bound_violation(g, psi1) <= g.fp_tol
    errs = [hmae.prop26_error(g, psi1, k) for k in range(g.s_grid.size)]
    assert errs[0] is None
    assert max(errs[1:]) < 3e-2


def test_radial_geodesic_matches_closed_form():
    ex = radial.ExactGeodesic()
    errs = []
    for n, nt in ((65, 33), (129, 65)):
        grid = p1grid(4.0, n)
        phi = radial.phi_on(grid)
        ts = sorted(set(np.r_[np.linspace(0, 1, nt)[1:], 1 - 2.0 ** -np.arange(7, 12)]))
        g = hmae.legendre_build(solve_family(phi, ts), phi)
        sel = grid.active & (grid.own[Z] > 0) & (grid.abs > 0)
        k = g.slice_index(0.5)
        errs.append(float(np.abs(g.tilde[k].z - ex(grid.abs, 0.5, phi.z))[sel].max()))
    assert errs[1] < errs[0] and errs[1] < 5e-3


def test_h_function(geo65):
    _, _, g = geo65
    H = hmae.h_exact(g)
    fd = hmae.h_function(g)
    for c in CHARTS:
        assert H[c].min() >= -1 and H[c].max() <= 0
        # right derivatives do not decrease in s
        assert np.all(np.diff(H[c], axis=0) >= 0)
        # the forward difference lies between the right derivatives at its ends
        sel = np.isfinite(fd[c])
        lo, hi = H[c][:-1], H[c][1:]
        assert np.all((fd[c] >= lo - 1e-6)[sel]) and np.all((fd[c] <= hi + 1e-6)[sel])


def test_omega_t_of_fibre_nests(geo65):
    _, _, g = geo65
    r = hmae.radius_of_s(g.s_grid[8])
    a = hmae.omega_t_of_fibre(g, r, 0.3)
    b = hmae.omega_t_of_fibre(g, r, 0.6)
    for c in CHARTS:
        assert not np.any(a[c] & ~b[c])
    assert b[Z][g.grid.center, g.grid.center]


def test_region_hausdorff_of_the_region_itself():
    grid = p1grid(4.0, 65)
    assert hmae.region_hausdorff(grid, conformal.A_mask(0.5, grid), 0.5) == 0.0
    assert hmae.region_hausdorff(grid, conformal.A_mask(0.4, grid), 0.5) > 0.0


def test_boundary_problem_on_the_unit_circle(geo65):
    _, _, g = geo65
    grid = g.grid
    tau = np.exp(0.7j)
    Phi = hmae.to_boundary_problem(g, tau)
    q = tau * grid.coords[grid.active]
    # at |tau| = 1 the log terms cancel: Phi(z, tau) = tilde_Phi(tau z, 0)
    tilde0, _ = hmae.evaluate_tilde(g, q, 0.0)
    assert np.abs(Phi.z[grid.active] - tilde0).max() < 1e-12
    # which is phi(tau z) up to the O(h^2) interpolation of the envelopes
    ref = hmae.evaluate_phi_at(g, q)
    assert np.abs(tilde0 - ref).max() < grid.h ** 2
    for bad in (0.0, 1.5):
        with pytest.raises(hmae.HMAEError):
            hmae.to_boundary_problem(g, bad)


def test_boundary_recovery_improves_as_s_shrinks(geo65):
    _, _, g = geo65
    rows = hmae.boundary_recovery(g)
    dev = [r["deviation"] for r in rows]
    assert np.all(np.diff(dev) >= 0)
    assert dev[0] < 1e-2


def test_closed_form_on_S_at_random_points(geo65, rng):
    # on S, Phi(z, tau) = zeta(z)
    _, _, g = geo65
    r = hmae.radius_of_s(0.5)
    z = np.exp(rng.uniform(-1, 3, 4000)) * np.exp(2j * np.pi * rng.random(4000))
    tz = r * z
    with np.errstate(invalid="ignore"):
        depth = np.abs(conformal.inverse_map(np.where(np.abs(tz.imag) < 1e-9, tz + 1e-6j, tz)))
    z = z[depth > r + 0.05][:100]
    assert z.size == 100
    vals, _ = hmae.evaluate_tilde(g, r * z, 0.5)
    Phi = vals + np.log1p(np.abs(r * z) ** 2) - np.log(r * r) - np.log1p(np.abs(z) ** 2)
    zeta = np.log(np.abs(z) ** 2) - np.log1p(np.abs(z) ** 2)
    assert np.abs(Phi - zeta).max() < 3e-2


def test_ma_residual_detects_a_perturbation(geo65):
    # U_ss grows by 0.2 and grad_z U_s is unchanged, so the bracket grows by
    # exactly Lap U / 20, whose integral (the fibre mass) is positive
    _, _, g = geo65
    grid = g.grid
    base = hmae.ma_residual(g)
    bumped = hmae.ma_residual(g, perturb=lambda s: 0.1 * s ** 2)
    U = np.stack([x.z for x in g.tilde]) + np.log1p(grid.abs ** 2)[None]
    lap = np.full(U.shape, np.nan)
    lap[:, 1:-1, 1:-1] = (U[:, 2:, 1:-1] + U[:, :-2, 1:-1] + U[:, 1:-1, 2:] + U[:, 1:-1, :-2]
                          - 4 * U[:, 1:-1, 1:-1]) / grid.h ** 2
    diff = bumped[Z] - base[Z]
    sel = np.isfinite(diff) & np.isfinite(lap)
    assert np.allclose(diff[sel], lap[sel] / 20, rtol=1e-9, atol=1e-9)
    own = sel & (grid.own[Z] > 0)[None]
    assert np.sum(np.where(own, diff, 0.0)) > 0


def test_fibre_mass_and_degeneracy(geo65):
    _, _, g = geo65
    rows = hmae.degeneracy_report(g, slices=[g.slice_index(0.5)])
    assert abs(rows[0].total_mass - 1) < 2e-2
    assert rows[0].coverage == 1.0
    assert rows[0].closed_form_error < 1e-12


def test_coarse_restriction():
    a = np.arange(81.0).reshape(9, 9)
    assert np.array_equal(hmae.coarse_restriction(a, 9, 5), a[::2, ::2])
    with pytest.raises(hmae.HMAEError):
        hmae.coarse_restriction(a, 9, 4)
