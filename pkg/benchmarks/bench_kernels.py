"""Numba versus numpy kernels: timing and agreement.

Runs each hot kernel through both paths on the same inputs, checks that
the results agree bit for bit, and prints the best-of-N wall time.

Usage: python benchmarks/bench_kernels.py [--n 257] [--repeat 5]
"""
import argparse
import time

import numpy as np

from hmaelab import kernels
from hmaelab._accel import use_numba
from hmaelab.envelope import curvature_rhs, obstacle
from hmaelab.hmae import default_s_grid
from hmaelab.p1geom import W, Z, p1grid
from hmaelab.perron import DIRECTIONS, build_stencil, defect_terms, r_layers
from hmaelab.potential import build_phi, select_constants


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def obstacle_case(n):
    grid = p1grid(4.0, n)
    phi = build_phi(grid, select_constants(grid))
    g = obstacle(phi, 0.5)
    clip = {c: np.where(np.isfinite(g[c]), g[c], 0.0) for c in (Z, W)}
    r = curvature_rhs(grid, 0.5)
    tgt, idx, wts = grid.ghost_map

    def run(fn, sweeps=20):
        vz, vw = clip[Z].copy(), clip[W].copy()
        for _ in range(sweeps):
            fn(vz, vw, g[Z], g[W], r[Z], r[W], grid.active, tgt, idx, wts, 1.0)
        return vz, vw

    return {
        "rb sweep x20": (lambda: run(kernels._rb_sweep_nb), lambda: run(kernels._rb_sweep_np)),
        "jacobi sweep x20": (lambda: run(kernels._jacobi_sweep_nb), lambda: run(kernels._jacobi_sweep_np)),
    }


def legendre_case(n, t_points=75):
    rng = np.random.default_rng(0)
    t = np.linspace(0.0, 1.0, t_points)
    psi = np.cumsum(-rng.random((t_points, n * n)), axis=0)
    s_grid = default_s_grid()

    def run(fn):
        return [fn(psi, t, s, 0.0) for s in s_grid]

    return {"legendre max x41": (lambda: run(kernels._legendre_nb), lambda: run(kernels._legendre_np))}


def perron_case(n=65, layers=17):
    grid = p1grid(4.0, n)
    r = r_layers(layers)
    st = build_stencil(r, DIRECTIONS)
    cd = defect_terms(grid, r, st)
    rng = np.random.default_rng(1)
    shape = (layers, n, n)
    v0 = {c: rng.random(shape) for c in (Z, W)}
    up = {c: np.full(shape, 10.0) for c in (Z, W)}
    act = np.broadcast_to(grid.active[None], shape).copy()

    def run(fn):
        vz, vw = v0[Z].copy(), v0[W].copy()
        oz, ow = vz.copy(), vw.copy()
        for color in (0, 1):
            fn(vz, vw, cd[Z], cd[W], up[Z], up[W], act, act, *st, color, oz, ow)
        return oz, ow

    return {"perron pass": (lambda: run(kernels._perron_pass_nb), lambda: run(kernels._perron_pass_np))}


def same(a, b):
    if isinstance(a, (tuple, list)):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b, equal_nan=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=257)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not use_numba():
        print("numba disabled (HMAELAB_NO_NUMBA or not installed): nothing to compare")
        return
    cases = {**obstacle_case(args.n), **legendre_case(args.n), **perron_case()}
    print(f"{'kernel':<20}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}  identical")
    for name, (nb, npy) in cases.items():
        nb()  # compile outside the timing
        t_nb, out_nb = best_of(nb, args.repeat)
        t_np, out_np = best_of(npy, args.repeat)
        print(f"{name:<20}{t_nb:>12.4f}{t_np:>12.4f}{t_np / t_nb:>10.1f}  {same(out_nb, out_np)}")


if __name__ == "__main__":
    main()
