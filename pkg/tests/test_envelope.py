import numpy as np
import pytest

from hmaelab import kernels
from hmaelab.envelope import (
    EnvelopeConvergenceError,
    SolverOptions,
    curvature_rhs,
    fixed_point_residual,
    green_potential,
    lelong_check,
    monotonicity_check,
    obstacle,
    solve_family,
    solve_psi_t,
)
from hmaelab.p1geom import CHARTS, W, Z, ddc_density, p1grid, zeta_chart

from . import radial


@pytest.fixture(scope="module")
def family65(example65):
    _, phi = example65
    return solve_family(phi, [0.25, 0.5, 0.75, 1.0])


def test_green_potential(grid65):
    zeta = green_potential(grid65)
    dens = ddc_density(zeta)
    assert dens.atom_mass_at_origin == 1.0
    assert np.nanmax(np.abs(dens.z[grid65.active])) < 1e-12
    vals = np.concatenate([zeta.full(c)[grid65.active].ravel() for c in CHARTS])
    assert vals.max() <= 0
    assert zeta.full(W)[grid65.center, grid65.center] == 0.0


def test_psi_1_is_zeta_on_the_example(family65):
    e1 = family65[-1]
    assert e1.t == 1.0
    for c in CHARTS:
        assert np.abs(e1.v.chart(c)).max() < 1e-8


def test_envelopes_stay_below_phi(example65, family65):
    # owned nodes cover P^1 once; ghosts carry interpolated values
    _, phi = example65
    g = phi.grid
    for e in family65:
        for c in CHARTS:
            sel = g.active & (g.own[c] > 0)
            with np.errstate(invalid="ignore"):
                gap = (e.psi.full(c) - phi.chart(c))[sel]
            assert gap[np.isfinite(gap)].max() <= e.fp_tol


def test_fixed_point_and_contact(family65):
    for e in family65:
        rhs = curvature_rhs(e.grid, e.t)
        assert fixed_point_residual(e.v, rhs, e.contact_mask) <= 10 * e.fp_tol
        for c in CHARTS:
            gap = (e.obstacle[c] - e.v.chart(c))[e.contact_mask[c]]
            assert np.all(gap <= e.contact_tol)


def test_curvature_coefficient():
    # (1 - t) omega_FS + dd^c v >= 0 with the 5-point mean form gives h^2 pi (1 - t) fs
    g = p1grid(4.0, 33)
    r = curvature_rhs(g, 0.25)
    assert r[Z][g.center, g.center] == pytest.approx(g.h ** 2 * np.pi * 0.75 / np.pi)


def test_density_is_nonnegative_off_origin(family65):
    for e in family65:
        dens = ddc_density(e.psi)
        assert dens.atom_mass_at_origin == e.t
        for c in CHARTS:
            d = dens.chart(c)[e.grid.active]
            assert np.nanmin(d) >= -1e-6


def test_lelong_certificate(family65, example65):
    _, phi = example65
    for e in family65:
        rep = lelong_check(e, radius=0.5)
        assert np.isfinite(rep["bound"])
        assert rep["atom"] == e.t
        # |v| <= sup|phi| + t sup|zeta| on the punctured disc
        far = e.grid.abs >= e.grid.h
        assert rep["bound"] <= np.abs(phi.z).max() + e.t * np.abs(zeta_chart(e.grid.coords, Z)[far]).max()
    assert lelong_check(family65[-1], radius=0.5)["bound"] < 1e-8


def test_lelong_bound_is_grid_stable():
    b = []
    for n in (65, 129):
        g = p1grid(4.0, n)
        e = solve_psi_t(radial.phi_on(g), 0.5)
        b.append(lelong_check(e, radius=0.5)["bound"])
    assert abs(b[0] - b[1]) < 0.05 * b[1]


def test_monotone_in_t(family65):
    rep = monotonicity_check(family65)
    assert rep["passed"], rep
    same = monotonicity_check([family65[0], family65[0]])
    assert same["passed"] and same["gap"] == 0.0


def test_continuity_in_t(example65):
    _, phi = example65
    e1 = solve_psi_t(phi, 1.0)
    gaps = []
    for t in (0.99, 0.999):
        e = solve_psi_t(phi, t)
        with np.errstate(invalid="ignore"):
            d = [np.abs(e.psi.full(c) - e1.psi.full(c))[np.isfinite(e1.psi.full(c))] for c in CHARTS]
        gaps.append(max(float(x.max()) for x in d))
    assert gaps[1] < gaps[0]
    assert gaps[1] < 1e-2


@pytest.mark.parametrize("t", [0.25, 0.5, 0.75])
def test_radial_envelope_matches_closed_form(t):
    errs = []
    for n in (65, 129):
        g = p1grid(4.0, n)
        e = solve_psi_t(radial.phi_on(g), t)
        sel = (g.abs > 0) & (g.abs <= 1) & g.active
        ex = radial.psi_exact(t, g.abs, radial.phi_on(g).z)
        with np.errstate(invalid="ignore"):
            errs.append(float(np.abs(e.psi.full(Z) - ex)[sel].max()))
    assert errs[1] < errs[0]
    assert errs[1] < 0.05


def test_jacobi_and_red_black_agree(grid65):
    phi = radial.phi_on(grid65)
    a = solve_psi_t(phi, 0.5, SolverOptions(mode="jacobi"))
    b = solve_psi_t(phi, 0.5)
    for c in CHARTS:
        assert np.abs(a.v.chart(c) - b.v.chart(c)).max() < 1e-6


def test_jacobi_is_deterministic(grid65):
    phi = radial.phi_on(grid65)
    a = solve_psi_t(phi, 0.3, SolverOptions(mode="jacobi"))
    b = solve_psi_t(phi, 0.3, SolverOptions(mode="jacobi"))
    assert np.array_equal(a.v.z, b.v.z) and np.array_equal(a.v.w, b.v.w)


def test_t_out_of_range(example65):
    _, phi = example65
    for t in (0.0, 1.5, -0.1):
        with pytest.raises(ValueError):
            solve_psi_t(phi, t)


def test_non_convergence_is_reported(example65):
    _, phi = example65
    with pytest.raises(EnvelopeConvergenceError, match="change"):
        solve_psi_t(phi, 0.5, SolverOptions(max_iter=3, nested=False))


@pytest.mark.skipif(not kernels.use_numba(), reason="needs numba")
@pytest.mark.parametrize("mode", ["rb", "jacobi"])
def test_numba_and_numpy_sweeps_are_identical(example65, mode):
    _, phi = example65
    g = phi.grid
    ob = obstacle(phi, 0.4)
    clip = {c: np.where(np.isfinite(ob[c]), ob[c], 0.0) for c in CHARTS}
    r = curvature_rhs(g, 0.4)
    tgt, idx, wts = g.ghost_map
    fns = {"rb": (kernels._rb_sweep_nb, kernels._rb_sweep_np), "jacobi": (kernels._jacobi_sweep_nb, kernels._jacobi_sweep_np)}
    out = []
    for fn in fns[mode]:
        vz, vw = clip[Z].copy(), clip[W].copy()
        for _ in range(25):
            fn(vz, vw, ob[Z], ob[W], r[Z], r[W], g.active, tgt, idx, wts, 1.0)
        out.append((vz, vw))
    assert np.array_equal(out[0][0], out[1][0]) and np.array_equal(out[0][1], out[1][1])
