"""Hot loops: obstacle sweeps, discrete Legendre transform, Perron sweep.

Every kernel has a numba version (``*_nb``) and a numpy version (``*_np``);
the public names dispatch on :func:`hmaelab._accel.use_numba`.  The two paths
perform the same floating-point operations in the same order.
"""
import numpy as np

from ._accel import njit, use_numba

# ---------------------------------------------------------------------------
# obstacle problem on the two-chart sphere
#
#   v <- min(g, mean of 4 neighbours + rhs)     (active nodes)
#   ghosts <- bilinear interpolation from the other chart
# ---------------------------------------------------------------------------


@njit
def _sync_nb(vz, vw, tgt, idx, wts):
    fz = vz.reshape(-1)
    fw = vw.reshape(-1)
    for k in range(tgt.shape[0]):
        acc = 0.0
        for m in range(idx.shape[1]):
            acc += fw[idx[k, m]] * wts[k, m]
        fz[tgt[k]] = acc
    for k in range(tgt.shape[0]):
        acc = 0.0
        for m in range(idx.shape[1]):
            acc += fz[idx[k, m]] * wts[k, m]
        fw[tgt[k]] = acc


def _sync_np(vz, vw, tgt, idx, wts):
    fz = vz.reshape(-1)
    fw = vw.reshape(-1)
    acc = fw[idx[:, 0]] * wts[:, 0]
    for m in range(1, idx.shape[1]):
        acc = acc + fw[idx[:, m]] * wts[:, m]
    fz[tgt] = acc
    acc = fz[idx[:, 0]] * wts[:, 0]
    for m in range(1, idx.shape[1]):
        acc = acc + fz[idx[:, m]] * wts[:, m]
    fw[tgt] = acc


@njit
def _rb_sweep_nb(vz, vw, gz, gw, rz, rw, active, tgt, idx, wts, omega):
    n = vz.shape[0]
    change = 0.0
    for color in range(2):
        for c in range(2):
            v = vz if c == 0 else vw
            g = gz if c == 0 else gw
            r = rz if c == 0 else rw
            for i in range(1, n - 1):
                for j in range(1, n - 1):
                    if (i + j) % 2 != color or not active[i, j]:
                        continue
                    mean = (v[i + 1, j] + v[i - 1, j] + v[i, j + 1] + v[i, j - 1]) * 0.25 + r[i, j]
                    new = v[i, j] + omega * (mean - v[i, j])
                    if new > g[i, j]:
                        new = g[i, j]
                    d = abs(new - v[i, j])
                    if d > change:
                        change = d
                    v[i, j] = new
        _sync_nb(vz, vw, tgt, idx, wts)
    return change


@njit
def _jacobi_sweep_nb(vz, vw, gz, gw, rz, rw, active, tgt, idx, wts, omega):
    n = vz.shape[0]
    change = 0.0
    oz = vz.copy()
    ow = vw.copy()
    for c in range(2):
        v = vz if c == 0 else vw
        o = oz if c == 0 else ow
        g = gz if c == 0 else gw
        r = rz if c == 0 else rw
        for i in range(1, n - 1):
            for j in range(1, n - 1):
                if not active[i, j]:
                    continue
                mean = (o[i + 1, j] + o[i - 1, j] + o[i, j + 1] + o[i, j - 1]) * 0.25 + r[i, j]
                new = o[i, j] + omega * (mean - o[i, j])
                if new > g[i, j]:
                    new = g[i, j]
                d = abs(new - o[i, j])
                if d > change:
                    change = d
                v[i, j] = new
    _sync_nb(vz, vw, tgt, idx, wts)
    return change


def _mean4(v):
    out = v.copy()
    out[1:-1, 1:-1] = (v[2:, 1:-1] + v[:-2, 1:-1] + v[1:-1, 2:] + v[1:-1, :-2]) * 0.25
    return out


def _relax_np(v, src, g, r, sel, omega):
    mean = _mean4(src) + r
    new = src + omega * (mean - src)
    new = np.minimum(new, g)
    d = np.abs(new - src)[sel]
    v[sel] = new[sel]
    return float(d.max()) if d.size else 0.0


def _rb_sweep_np(vz, vw, gz, gw, rz, rw, active, tgt, idx, wts, omega):
    n = vz.shape[0]
    ii, jj = np.indices((n, n))
    inner = np.zeros((n, n), bool)
    inner[1:-1, 1:-1] = True
    change = 0.0
    for color in range(2):
        sel = active & inner & ((ii + jj) % 2 == color)
        change = max(change, _relax_np(vz, vz, gz, rz, sel, omega))
        change = max(change, _relax_np(vw, vw, gw, rw, sel, omega))
        _sync_np(vz, vw, tgt, idx, wts)
    return change


def _jacobi_sweep_np(vz, vw, gz, gw, rz, rw, active, tgt, idx, wts, omega):
    inner = np.zeros(active.shape, bool)
    inner[1:-1, 1:-1] = True
    sel = active & inner
    oz, ow = vz.copy(), vw.copy()
    change = max(_relax_np(vz, oz, gz, rz, sel, omega), _relax_np(vw, ow, gw, rw, sel, omega))
    _sync_np(vz, vw, tgt, idx, wts)
    return change


def sync_ghosts(vz, vw, tgt, idx, wts):
    (_sync_nb if use_numba() else _sync_np)(vz, vw, tgt, idx, wts)


def obstacle_sweep(vz, vw, gz, gw, rz, rw, active, ghost_map, omega=1.0, mode="rb"):
    """One in-place sweep of the two-chart obstacle iteration; returns sup |change|.

    ``mode`` is ``"rb"`` (red-black, over-relaxed by ``omega``) or
    ``"jacobi"``.
    """
    tgt, idx, wts = ghost_map
    if mode == "rb":
        fn = _rb_sweep_nb if use_numba() else _rb_sweep_np
    elif mode == "jacobi":
        fn = _jacobi_sweep_nb if use_numba() else _jacobi_sweep_np
    else:
        raise ValueError(f"unknown sweep mode {mode!r}")
    return fn(vz, vw, gz, gw, rz, rw, active, tgt, idx, wts, float(omega))


# ---------------------------------------------------------------------------
# discrete Legendre transform:  F(x, s) = max_k psi_k(x) - (1 - t_k) s
# ---------------------------------------------------------------------------


@njit
def _legendre_nb(psi, t, s, tie_tol):
    T, N = psi.shape
    out = np.full(N, -np.inf)
    arg = np.zeros(N, np.int64)
    # row-major passes: the max, then the largest index within tie_tol of it
    for k in range(T):
        shift = (1.0 - t[k]) * s
        for x in range(N):
            val = psi[k, x] - shift
            if val > out[x]:
                out[x] = val
    for k in range(T):
        shift = (1.0 - t[k]) * s
        for x in range(N):
            if psi[k, x] - shift >= out[x] - tie_tol:
                arg[x] = k
    return out, arg


def _legendre_np(psi, t, s, tie_tol):
    vals = psi - ((1.0 - t) * s)[:, None]
    best = vals.max(axis=0)
    hit = vals >= best[None, :] - tie_tol
    arg = psi.shape[0] - 1 - np.argmax(hit[::-1], axis=0)
    return best, arg.astype(np.int64)


def legendre_max(psi, t, s, tie_tol=0.0):
    """Sup over the t-grid and the active index (largest t among ties).

    ``psi`` has shape (T, N) and may contain ``-inf``.
    """
    psi = np.ascontiguousarray(psi, dtype=float)
    t = np.ascontiguousarray(t, dtype=float)
    fn = _legendre_nb if use_numba() else _legendre_np
    return fn(psi, t, float(s), float(tie_tol))


@njit
def _legendre_inf_nb(F, s, t):
    S, N = F.shape
    out = np.full(N, np.inf)
    for k in range(S):
        shift = (1.0 - t) * s[k]
        for x in range(N):
            val = F[k, x] + shift
            if val < out[x]:
                out[x] = val
    return out


def legendre_inf(F, s, t):
    """inf over the s-grid of F(s) + (1 - t) s, the inverse transform."""
    F = np.ascontiguousarray(F, dtype=float)
    s = np.ascontiguousarray(s, dtype=float)
    if use_numba():
        return _legendre_inf_nb(F, s, float(t))
    return (F + ((1.0 - t) * s)[:, None]).min(axis=0)


# ---------------------------------------------------------------------------
# point in polygon (crossing parity; equals the winding number for simple curves)
# ---------------------------------------------------------------------------


@njit
def _inside_nb(xs, ys, px, py):
    m = xs.shape[0]
    out = np.zeros(px.shape[0], np.bool_)
    for k in range(px.shape[0]):
        x = px[k]
        y = py[k]
        inside = False
        j = m - 1
        for i in range(m):
            if (ys[i] > y) != (ys[j] > y):
                xc = xs[j] + (y - ys[j]) * (xs[i] - xs[j]) / (ys[i] - ys[j])
                if x < xc:
                    inside = not inside
            j = i
        out[k] = inside
    return out


def _inside_np(xs, ys, px, py):
    out = np.zeros(px.shape[0], bool)
    xj, yj = np.roll(xs, 1), np.roll(ys, 1)
    step = max(1, 4_000_000 // xs.size)
    for a in range(0, px.size, step):
        x = px[a:a + step, None]
        y = py[a:a + step, None]
        cross = (ys[None, :] > y) != (yj[None, :] > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = xj + (y - yj) * (xs - xj) / (ys - yj)
        out[a:a + step] = (np.sum(cross & (x < xc), axis=1) % 2) == 1
    return out


def points_in_polygon(curve, points):
    """Crossing-parity membership of complex ``points`` in the closed polyline ``curve``."""
    curve = np.asarray(curve, complex)
    pts = np.asarray(points, complex).ravel()
    xs, ys = np.ascontiguousarray(curve.real), np.ascontiguousarray(curve.imag)
    px, py = np.ascontiguousarray(pts.real), np.ascontiguousarray(pts.imag)
    fn = _inside_nb if use_numba() else _inside_np
    return fn(xs, ys, px, py)


# ---------------------------------------------------------------------------
# Legendre supremum at off-grid points:
#   max_k t_k zeta(p) + interp(v_k)(p) - (1 - t_k) s
# ---------------------------------------------------------------------------


@njit
def _legendre_points_nb(V, t, s, zeta, idx, wts, tie_tol):
    T = V.shape[0]
    N = zeta.shape[0]
    K = idx.shape[1]
    out = np.empty(N)
    arg = np.empty(N, np.int64)
    vals = np.empty(T)
    for p in range(N):
        best = -np.inf
        for k in range(T):
            acc = 0.0
            for m in range(K):
                acc += V[k, idx[p, m]] * wts[p, m]
            # same operation order as the numpy path
            val = acc
            if t[k] != 0.0:
                val = val + t[k] * zeta[p]
            val = val - (1.0 - t[k]) * s
            vals[k] = val
            if val > best:
                best = val
        kk = 0
        for k in range(T - 1, -1, -1):
            if vals[k] >= best - tie_tol:
                kk = k
                break
        out[p] = best
        arg[p] = kk
    return out, arg


def _legendre_points_np(V, t, s, zeta, idx, wts, tie_tol):
    out = np.empty(zeta.shape[0])
    arg = np.empty(zeta.shape[0], np.int64)
    for a in range(0, zeta.shape[0], 8192):
        sl = slice(a, a + 8192)
        # accumulate stencil terms in order, as the compiled loop does
        interp = V[:, idx[sl, 0]] * wts[sl, 0]
        for m in range(1, idx.shape[1]):
            interp = interp + V[:, idx[sl, m]] * wts[sl, m]
        with np.errstate(invalid="ignore"):
            pole = np.where(t[:, None] != 0.0, t[:, None] * zeta[None, sl], 0.0)
        vals = interp + pole - ((1.0 - t) * s)[:, None]
        out[sl], arg[sl] = _legendre_np(vals, np.zeros_like(t), 0.0, tie_tol)
    return out, arg


def legendre_at_points(V, t, s, zeta, idx, wts, tie_tol=0.0):
    """Sup over k of t_k zeta + (interpolated V_k) - (1 - t_k) s at N points.

    ``V`` is (T, M) flattened chart values, ``idx``/``wts`` the (N, K)
    interpolation stencils, ``zeta`` the (N,) Green potential at the points.
    Returns (values, index of the largest active t).
    """
    V = np.ascontiguousarray(V, dtype=float)
    t = np.ascontiguousarray(t, dtype=float)
    zeta = np.ascontiguousarray(zeta, dtype=float)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    wts = np.ascontiguousarray(wts, dtype=float)
    fn = _legendre_points_nb if use_numba() else _legendre_points_np
    return fn(V, t, float(s), zeta, idx, wts, float(tie_tol))


# ---------------------------------------------------------------------------
# direct Perron sweep for the circle-invariant problem in (x, y, r = |tau|)
#
#   V <- min(upper, min_d [ mean_d(V) + c_d ])
#
# Each direction d contributes four points: a z-offset per point and a
# fractional r-layer (lo, frac) per point and layer; ``ok[d, k]`` switches a
# direction off where its circle leaves the closed unit disc in tau.  Two
# colours, each updated from the state at the start of its pass (identical
# in both code paths).
# ---------------------------------------------------------------------------


@njit
def _perron_pass_nb(vz, vw, cz, cw, uz, uw, az, aw, zoff, rlo, rfr, ok, color, out_z, out_w):
    L, n, _ = vz.shape
    nd = zoff.shape[0]
    change = 0.0
    for ch in range(2):
        v = vz if ch == 0 else vw
        cd = cz if ch == 0 else cw
        up = uz if ch == 0 else uw
        act = az if ch == 0 else aw
        out = out_z if ch == 0 else out_w
        for k in range(L - 1):
            for i in range(1, n - 1):
                for j in range(1, n - 1):
                    if (i + j + k) % 2 != color or not act[k, i, j]:
                        continue
                    best = up[k, i, j]
                    for d in range(nd):
                        if not ok[d, k]:
                            continue
                        m = 0.0
                        for q in range(4):
                            ii = i + zoff[d, q, 0]
                            jj = j + zoff[d, q, 1]
                            lo = rlo[d, k, q]
                            f = rfr[d, k, q]
                            val = v[lo, ii, jj]
                            if f > 0.0:
                                val = (1.0 - f) * val + f * v[lo + 1, ii, jj]
                            m += val
                        cand = 0.25 * m + cd[d, k, i, j]
                        if cand < best:
                            best = cand
                    d0 = abs(best - v[k, i, j])
                    if d0 > change:
                        change = d0
                    out[k, i, j] = best
    return change


def _perron_pass_np(vz, vw, cz, cw, uz, uw, az, aw, zoff, rlo, rfr, ok, color, out_z, out_w):
    L, n, _ = vz.shape
    kk, ii, jj = np.indices((L - 1, n - 2, n - 2))
    parity = (ii + jj + kk + 2) % 2 == color
    change = 0.0
    krange = np.arange(L - 1)
    for v, cd, up, act, out in ((vz, cz, uz, az, out_z), (vw, cw, uw, aw, out_w)):
        sel = parity & act[:-1, 1:-1, 1:-1]
        best = up[:-1, 1:-1, 1:-1].copy()
        for d in range(zoff.shape[0]):
            m = np.zeros_like(best)
            for q in range(4):
                di, dj = int(zoff[d, q, 0]), int(zoff[d, q, 1])
                sh = v[:, 1 + di:n - 1 + di, 1 + dj:n - 1 + dj]
                lo = rlo[d, krange, q]
                f = rfr[d, krange, q][:, None, None]
                hi = np.minimum(lo + 1, L - 1)
                m += np.where(f > 0.0, (1.0 - f) * sh[lo] + f * sh[hi], sh[lo])
            cand = 0.25 * m + cd[d, :-1, 1:-1, 1:-1]
            cand = np.where(ok[d, krange][:, None, None], cand, np.inf)
            best = np.minimum(best, cand)
        diff = np.abs(best - v[:-1, 1:-1, 1:-1])[sel]
        change = max(change, float(diff.max()) if diff.size else 0.0)
        inner = out[:-1, 1:-1, 1:-1]
        inner[sel] = best[sel]
    return change


def perron_sweep(vz, vw, cz, cw, uz, uw, az, aw, stencil, ghost_map, pole):
    """One two-colour sweep in place.

    Ghost layers are resynchronised after each colour and the z-chart node
    ``pole`` on the axis r = 0 is reset to the mean of its four neighbours.
    """
    zoff, rlo, rfr, ok = stencil
    tgt, idx, wts = ghost_map
    fn = _perron_pass_nb if use_numba() else _perron_pass_np
    sync = _sync_nb if use_numba() else _sync_np
    i, j = pole
    change = 0.0
    for color in (0, 1):
        oz, ow = vz.copy(), vw.copy()
        change = max(change, fn(oz, ow, cz, cw, uz, uw, az, aw, zoff, rlo, rfr, ok, color, vz, vw))
        vz[0, i, j] = 0.25 * (vz[0, i + 1, j] + vz[0, i - 1, j] + vz[0, i, j + 1] + vz[0, i, j - 1])
        for k in range(vz.shape[0]):
            sync(vz[k], vw[k], tgt, idx, wts)
    return change
