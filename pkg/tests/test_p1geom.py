import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate as quad

from hmaelab.p1geom import (
    CHARTS,
    W,
    Z,
    ChartConsistencyError,
    ChartGrid,
    ChartInfinityError,
    ChartPoint,
    GlobalFunction,
    ddc_density,
    fs_density,
    full_mask,
    integrate,
    p1grid,
    transition,
    zeta_chart,
)

coords = st.complex_numbers(min_magnitude=1e-3, max_magnitude=1e3, allow_nan=False, allow_infinity=False)


@pytest.mark.parametrize(
    "p, q",
    [(ChartPoint(Z, 2), ChartPoint(W, 0.5)), (ChartPoint(Z, 1j), ChartPoint(W, -1j)), (ChartPoint(W, -4), ChartPoint(Z, -0.25))],
)
def test_transition_examples(p, q):
    r = transition(p)
    assert r.chart == q.chart
    assert r.coord == pytest.approx(q.coord)


@given(coords, st.sampled_from(CHARTS))
def test_transition_is_involution(c, chart):
    p = ChartPoint(chart, c)
    back = transition(transition(p))
    assert back.chart == chart
    assert back.coord == pytest.approx(c, rel=1e-12)


def test_transition_of_origin_is_infinity():
    with pytest.raises(ChartInfinityError):
        transition(ChartPoint(Z, 0))


def test_fs_density_at_origin():
    assert fs_density(ChartPoint(Z, 0)) == pytest.approx(1 / np.pi)


def test_fs_total_mass_by_quadrature():
    # radial integral of (1/pi)(1 + r^2)^-2 over the plane
    val, _ = quad.quad(lambda r: 2 * r / (1 + r * r) ** 2, 0, np.inf)
    assert val == pytest.approx(1.0, abs=1e-10)


@given(coords)
def test_fs_density_chart_covariance(z):
    # density_W(1/z) |dw/dz|^2 = density_Z(z)
    lhs = fs_density(ChartPoint(W, 1 / z)) / abs(z) ** 4
    assert lhs == pytest.approx(fs_density(ChartPoint(Z, z)), rel=1e-9)


def test_chart_grid_validation():
    with pytest.raises(ValueError):
        ChartGrid(Z, 4.0, 64, np.zeros((64, 64)))
    with pytest.raises(ValueError):
        ChartGrid(Z, 1.5, 65, np.zeros((65, 65)))


def test_node_coordinates(grid65):
    g = grid65
    assert g.coords[0, 0] == complex(-4, -4)
    assert g.coords[g.center, g.center] == 0
    assert g.coords[3, 5] == pytest.approx(complex(-4 + 3 * g.h, -4 + 5 * g.h))


def test_zero_function_has_unit_mass(grid65):
    u = GlobalFunction(grid65, np.zeros((65, 65)), np.zeros((65, 65)))
    dens = ddc_density(u)
    assert integrate(dens, full_mask(grid65)) == pytest.approx(1.0, abs=5e-3)
    assert integrate(dens, full_mask(grid65, False)) == 0.0


def test_unit_disc_has_half_mass(grid65):
    u = GlobalFunction(grid65, np.zeros((65, 65)), np.zeros((65, 65)))
    region = {Z: grid65.abs <= 1.0, W: grid65.abs >= 1.0}
    assert integrate(ddc_density(u), region) == pytest.approx(0.5, abs=5e-3)


def test_zeta_is_harmonic_off_origin_with_unit_atom():
    g = p1grid(4.0, 129)
    zeta = GlobalFunction(g, np.zeros((129, 129)), np.zeros((129, 129)), pole=1.0)
    dens = ddc_density(zeta)
    assert dens.atom_mass_at_origin == 1.0
    for c in CHARTS:
        assert np.nanmax(np.abs(dens.chart(c)[g.active])) < 1e-12
    assert integrate(dens, full_mask(g)) == pytest.approx(1.0, abs=1e-12)


def test_minus_log_fs_potential_cancels_fs_near_origin():
    # the residual density is the 5-point truncation error: second order in h
    errs = []
    for n in (65, 129):
        g = p1grid(4.0, n)
        u = GlobalFunction.from_callable(g, lambda z: -np.log1p(np.abs(z) ** 2),
                                         lambda w: np.log(np.abs(w) ** 2 + 1e-300) - np.log1p(np.abs(w) ** 2))
        d = ddc_density(u).z
        errs.append(np.nanmax(np.abs(d[g.abs <= 0.5])))
    assert errs[1] < 1e-2 * fs_density(0.0)
    assert errs[0] / errs[1] > 3.5


def test_ddc_is_linear(grid65, rng):
    n = grid65.n
    a = GlobalFunction(grid65, rng.standard_normal((n, n)), rng.standard_normal((n, n)), consistency_tol=np.inf)
    b = GlobalFunction(grid65, rng.standard_normal((n, n)), rng.standard_normal((n, n)), consistency_tol=np.inf)
    fs = {c: grid65.fs for c in CHARTS}
    da, db, dab = ddc_density(a), ddc_density(b), ddc_density(a + b)
    for c in CHARTS:
        lhs = dab.chart(c) - fs[c]
        rhs = (da.chart(c) - fs[c]) + (db.chart(c) - fs[c])
        assert np.nanmax(np.abs(lhs - rhs)) < 1e-9 * np.nanmax(np.abs(lhs))


def test_smooth_function_is_chart_consistent(grid65):
    f = GlobalFunction.from_callable(grid65, lambda z: np.real(z) / (1 + np.abs(z) ** 2),
                                     lambda w: np.real(np.conj(w)) / (1 + np.abs(w) ** 2))
    assert f.check_consistency() <= f.consistency_tol


def test_inconsistent_function_is_rejected(grid65):
    f = GlobalFunction(grid65, np.zeros((65, 65)), np.ones((65, 65)))
    with pytest.raises(ChartConsistencyError):
        f.check_consistency()


def test_inconsistent_region_names_the_node(grid65):
    u = GlobalFunction(grid65, np.zeros((65, 65)), np.zeros((65, 65)))
    region = {Z: np.ones((65, 65), bool), W: np.ones((65, 65), bool)}
    region[Z][np.abs(grid65.abs - 1.0) <= grid65.h] = False
    with pytest.raises(ChartConsistencyError, match="overlap node"):
        integrate(ddc_density(u), region)


def test_ghost_sync_reproduces_smooth_function():
    g = p1grid(4.0, 129)
    fz = np.real(g.coords) / (1 + g.abs ** 2)
    fw = np.real(np.conj(g.coords)) / (1 + g.abs ** 2)
    vz, vw = fz.copy(), fw.copy()
    vz[~g.active] = 0
    vw[~g.active] = 0
    g.sync_ghosts(vz, vw)
    ghosts = ~g.active
    assert np.abs(vz - fz)[ghosts].max() < 10 * g.h ** 2
    assert np.abs(vw - fw)[ghosts].max() < 10 * g.h ** 2


@given(st.floats(-3.9, 3.9), st.floats(-3.9, 3.9), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_bilinear_interpolation_is_exact_on_bilinear_functions(x, y, a, b, c):
    g = p1grid(4.0, 33)
    vals = a + b * g.coords.real + c * g.coords.real * g.coords.imag
    got = g.interpolate(vals, np.array([complex(x, y)]))[0]
    assert got == pytest.approx(a + b * x + c * x * y, abs=1e-9)


@given(coords)
def test_ownership_splits_points(z):
    g = p1grid(4.0, 33)
    in_z, cz, cw = g.owner(np.array([z]))
    assert in_z[0] == (abs(z) <= 1)


def test_ownership_weights_partition_unity(grid65):
    # every point of P^1 is counted once: owned areas add up to the sphere's FS mass
    g = grid65
    tot = sum(float((g.fs * g.own[c]).sum()) for c in CHARTS) * g.h ** 2
    assert tot == pytest.approx(1.0, abs=5e-3)


def test_zeta_chart_values():
    assert zeta_chart(np.array([1.0 + 0j]), Z)[0] == pytest.approx(-np.log(2))
    assert zeta_chart(np.array([1.0 + 0j]), W)[0] == pytest.approx(-np.log(2))
    assert zeta_chart(np.array([0j]), Z)[0] == -np.inf
