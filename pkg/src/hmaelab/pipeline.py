"""Stage driver: potential, envelopes, Hele-Shaw, conformal, HMAE, oracle, report.

Each stage computes its artifacts (pulling in upstream stages as needed),
evaluates the acceptance criteria it owns and, when selected, writes its
files.  Solved envelopes are cached on disk keyed by the hash of the
configuration keys they depend on.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import conformal, gridio, hmae
from ._accel import set_threads
from .config import STAGES, RunConfig
from .envelope import SingularEnvelope, SolverOptions, default_t_grid, monotonicity_check, obstacle, solve_family, solve_psi_t
from .heleshaw import build_family, contours, contours_csv, nesting_violations_beyond_one_cell
from .p1geom import CHARTS, W, Z, GlobalFunction, p1grid
from .potential import build_phi, hausdorff_to_segment, report_json, select_constants, validate_potential

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_SOFT, EXIT_HARD, EXIT_CONFIG = 0, 2, 3, 4
PROP31_RADII = (0.3, 0.5, 0.7, 0.9)
CACHE_KEYS = ("grid", "potential", "t_grid", "solver")
#: errors below this are round-off; refinement cannot decrease them further
FP_FLOOR = 1e-8


class StageError(RuntimeError):
    """A stage could not produce its artifact."""

    def __init__(self, stage, invariant, node=None, detail=""):
        self.stage, self.invariant, self.node = stage, invariant, node
        msg = f"stage {stage}: {invariant}"
        if node is not None:
            msg += f" (worst node {node})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


@dataclass
class Criterion:
    """One acceptance criterion or reported invariant."""

    id: str
    name: str
    passed: bool
    value: float
    tolerance: float
    hard: bool = True
    detail: dict = field(default_factory=dict)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def save_family(path, family):
    """Solved envelopes as one compressed npz (exact round trip)."""
    fam = sorted(family, key=lambda e: e.t)
    np.savez_compressed(
        path,
        t=np.array([e.t for e in fam]),
        vz=np.stack([e.v.z for e in fam]),
        vw=np.stack([e.v.w for e in fam]),
        cz=np.stack([e.contact_mask[Z] for e in fam]),
        cw=np.stack([e.contact_mask[W] for e in fam]),
        iterations=np.array([e.iterations for e in fam]),
        residual=np.array([e.residual for e in fam]),
        fp_tol=np.array([e.fp_tol for e in fam]),
        contact_tol=np.array([e.contact_tol for e in fam]),
    )


def load_family(path, phi: GlobalFunction):
    grid = phi.grid
    with np.load(path) as d:
        out = []
        for k, t in enumerate(d["t"]):
            t = float(t)
            v = GlobalFunction(grid, d["vz"][k].copy(), d["vw"][k].copy())
            psi = GlobalFunction(grid, v.z, v.w, pole=t)
            out.append(SingularEnvelope(t, psi, v, obstacle(phi, t), {Z: d["cz"][k].copy(), W: d["cw"][k].copy()},
                                        int(d["iterations"][k]), float(d["residual"][k]), float(d["fp_tol"][k]),
                                        float(d["contact_tol"][k])))
    return out


class Pipeline:
    """Lazy stage graph for one configuration."""

    def __init__(self, config: RunConfig, out=None, cache=None, export=True):
        self.cfg = config
        self.tol = config.tolerances()
        self.out = Path(out if out is not None else config["run.out"])
        self.use_cache = config["run.cache"] if cache is None else cache
        self.export = export
        self.criteria: list[Criterion] = []
        self.timings = {}
        self._art = {}
        set_threads(config["run.threads"])

    # -- helpers -----------------------------------------------------------
    def _add(self, *crit):
        self.criteria.extend(crit)

    def _once(self, name, fn):
        if name not in self._art:
            t0 = time.perf_counter()
            self._art[name] = fn()
            self.timings[name] = time.perf_counter() - t0
            log.info("stage %s done in %.1fs", name, self.timings[name])
        return self._art[name]

    def _dir(self, *parts):
        d = self.out.joinpath(*parts)
        d.mkdir(parents=True, exist_ok=True)
        return d

    @property
    def grid(self):
        return self._once("grid", lambda: p1grid(self.cfg["grid.R"], self.cfg["grid.n"]))

    @property
    def h(self):
        return self.grid.h

    # -- stages ------------------------------------------------------------
    def potential(self):
        return self._once("potential", self._potential)

    def _potential(self):
        g = self.grid
        try:
            k = select_constants(g, self.cfg["potential.delta"], self.cfg["potential.margin"])
            phi = build_phi(g, k)
        except ValueError as exc:
            raise StageError("potential", "constant selection / chart consistency", detail=str(exc)) from exc
        rep = validate_potential(phi, k, strict=False)
        checks = {c["name"]: c for c in rep["checks"]}
        eq_ok = rep["equality_set_hausdorff"] <= self.tol["equality_hausdorff_cells"] * self.h
        passed = (checks["positive_density"]["passed"] and eq_ok
                  and checks["inner_inequality"]["passed"] and checks["outer_inequality"]["passed"])
        self._add(Criterion("11", "potential validity", bool(passed), rep["min_density"], 0.0, detail={
            "min_density": rep["min_density"],
            "equality_set_hausdorff_cells": rep["equality_set_hausdorff"] / self.h,
            "inner_slack": checks["inner_inequality"]["value"],
            "outer_slack": checks["outer_inequality"]["value"],
        }))
        if self.export and "potential" in self.cfg["run.stages"]:
            d = self._dir("potential")
            (d / "potential.json").write_text(report_json(rep))
            gridio.dump_function(phi, d, "phi")
        return k, phi, rep

    @property
    def phi(self):
        return self.potential()[1]

    def t_grid(self):
        return default_t_grid(self.cfg["t_grid.points"], tuple(self.cfg["t_grid.tail"]))

    def envelopes(self):
        return self._once("envelopes", self._envelopes)

    def _envelopes(self):
        phi = self.phi
        key = self.cfg.hash(CACHE_KEYS)[:16]
        path = self.out / "cache" / f"envelopes-{key}.npz"
        if self.use_cache and path.exists():
            log.info("envelope cache hit %s", path.name)
            family = load_family(path, phi)
            self.timings["envelope_cache"] = "hit"
        else:
            try:
                family = solve_family(phi, self.t_grid(), SolverOptions(mode=self.cfg["solver.mode"]))
            except (RuntimeError, AssertionError) as exc:
                raise StageError("envelopes", "sweep convergence / monotone decrease", detail=str(exc)) from exc
            if self.use_cache:
                self._dir("cache")
                save_family(path, family)
            self.timings["envelope_cache"] = "miss"
        e1 = family[-1]
        if e1.t != 1.0:
            raise StageError("envelopes", "t-grid must end at t = 1")
        err, node = 0.0, None
        for c in CHARTS:
            # psi_1 - zeta is exactly the stored regular part
            a = np.abs(e1.v.chart(c))
            a[self.grid.own[c] <= 0] = 0.0
            i = np.unravel_index(int(np.argmax(a)), a.shape)
            if a[i] > err:
                err, node = float(a[i]), (c, int(i[0]), int(i[1]))
        coarse = self._psi1_error_coarse()
        self._add(Criterion("1", "psi_1 closed form", bool(err <= self.tol["psi1"] and (coarse is None or err < coarse or err <= FP_FLOOR)),
                            err, self.tol["psi1"], detail={"worst_node": node, "coarse_error": coarse}))
        mono = monotonicity_check(family)
        self._add(Criterion("env.monotone", "psi_t non-increasing in t", bool(mono["passed"]), mono["gap"], 0.0,
                            hard=False, detail={"pair": mono["pair"], "node": mono["node"]}))
        if self.export and "envelopes" in self.cfg["run.stages"]:
            d = self._dir("envelopes")
            index = []
            for k, e in enumerate(family):
                gridio.dump_function(e.psi, d, f"psi_{k:03d}")
                index.append({"index": k, "t": e.t, "iterations": e.iterations, "residual": e.residual,
                              "contact_nodes": {c: int(e.contact_mask[c].sum()) for c in CHARTS}})
            (d / "index.json").write_text(json.dumps(_jsonable({"schema_version": SCHEMA_VERSION, "envelopes": index}),
                                                     indent=1))
        return family

    def _psi1_error_coarse(self):
        """psi_1 error on the next coarser nested grid (None if too coarse)."""
        n = self.grid.n
        if n < 33 or (n - 1) % 2:
            return None
        k = self.potential()[0]
        gc = p1grid(self.grid.R, (n + 1) // 2)
        e = solve_psi_t(build_phi(gc, k, check=False), 1.0, SolverOptions(mode=self.cfg["solver.mode"]))
        return max(float(np.abs(e.v.chart(c))[gc.own[c] > 0].max()) for c in CHARTS)

    def heleshaw(self):
        return self._once("heleshaw", self._heleshaw)

    def _heleshaw(self):
        family, phi, g = self.envelopes(), self.phi, self.grid
        try:
            hs = build_family(family, phi)
        except ValueError as exc:
            raise StageError("heleshaw", "chart-consistent domain masks", detail=str(exc)) from exc
        err = np.abs(hs.masses - hs.t_grid)
        worst = int(np.argmax(err))
        nest = nesting_violations_beyond_one_cell(g, hs)
        self._add(Criterion("3", "Hele-Shaw mass law", bool(err.max() <= self.tol["mass"] and nest == 0),
                            float(err.max()), self.tol["mass"],
                            detail={"worst_t": float(hs.t_grid[worst]), "nesting_violations_beyond_one_cell": nest}))
        # complement of Omega_1 in the w-chart versus the arc [-1, 1]
        comp = g.active & ~hs.domains[-1][W]
        haus = hausdorff_to_segment(g.coords[comp])
        self._add(Criterion("2", "Omega_1 identification", bool(haus <= self.tol["omega1_hausdorff_cells"] * self.h),
                            haus / self.h, self.tol["omega1_hausdorff_cells"], detail={"units": "cells"}))
        if self.export and "heleshaw" in self.cfg["run.stages"]:
            d = self._dir("heleshaw")
            with open(d / "contours.csv", "w", newline="") as fh:
                contours_csv([(e.t, contours(e, phi)) for e in family], fh)
            (d / "masses.json").write_text(json.dumps(_jsonable({
                "schema_version": SCHEMA_VERSION, "t": hs.t_grid, "mass": hs.masses}), indent=1))
        return hs

    def conformal(self):
        return self._once("conformal", self._conformal)

    def _conformal(self):
        bi = conformal.verify_biholomorphism()
        radii = np.linspace(0.1, 0.9, 9)
        nest = conformal.nesting_holds(radii)
        self._add(Criterion("conformal.map", "slit-plane map is a biholomorphism", bool(bi["passed"]),
                            float(bi["collisions"] + bi["slit_hits"]), 0.0, detail=bi),
                  Criterion("conformal.nesting", "A_r nested in r", bool(nest), 0.0, 0.0))
        if self.export and "conformal" in self.cfg["run.stages"]:
            d = self._dir("conformal")
            with open(d / "boundaries.csv", "w", newline="") as fh:
                conformal.polylines_csv([(r, [conformal.boundary_polyline(r)]) for r in radii], fh)
        return bi

    def s_grid(self):
        return hmae.default_s_grid(self.cfg["s_grid.s_max"], self.cfg["s_grid.uniform"], self.cfg["s_grid.cluster"],
                                   self.cfg["s_grid.first"])

    def geodesic(self):
        return self._once("geodesic", lambda: hmae.legendre_build(self.envelopes(), self.phi, self.s_grid()))

    def hmae(self):
        return self._once("hmae", self._hmae)

    def _hmae(self):
        g, family, grid = self.geodesic(), self.envelopes(), self.grid
        self.conformal()
        psi1 = family[-1].psi
        tol = self.tol
        # 4 and 5: degeneracy and closed form on the eroded predicted S
        rows = hmae.degeneracy_report(g, tol=tol["degeneracy"])
        # slices whose eroded S holds no node are vacuous for the coverage part
        counted = [r for r in rows if r.s_nodes > 0]
        cover = min(r.coverage for r in counted) if counted else float("nan")
        area = min(r.detected_area for r in rows)
        closed = max(r.closed_form_error for r in rows)
        self._add(Criterion("4", "degeneracy on S", bool(counted and cover >= tol["degeneracy_coverage"] and area > 0), cover,
                            tol["degeneracy_coverage"], detail={
                                "min_detected_area": area,
                                "max_density_on_S": max(r.max_density_on_S for r in rows),
                                "slices": len(rows),
                                "slices_with_S_nodes": len(counted)}),
                  Criterion("5", "closed form on S", bool(closed <= tol["closed_form"]), closed, tol["closed_form"]))
        masses = np.array([r.total_mass for r in rows])
        self._add(Criterion("hmae.fibre_mass", "fibre mass one", bool(np.abs(masses - 1).max() <= tol["mass"]),
                            float(np.abs(masses - 1).max()), tol["mass"], hard=False))
        # 6: Prop 2.6 and the lower bound
        p26 = max(hmae.prop26_error(g, psi1, k) for k in range(1, g.s_grid.size))
        low = hmae.lower_bound_violation(g, psi1)
        self._add(Criterion("6", "tilde_Phi = psi_1 off A_r", bool(p26 <= tol["prop26"] and low <= g.fp_tol), p26,
                            tol["prop26"], detail={"lower_bound_violation": low, "fp_tol": g.fp_tol}))
        # 7: duality roundtrip, convexity and slopes
        inv = hmae.legendre_invert_check(g, family)
        rt = max(x["error"] for x in inv)
        conv = hmae.convexity_report(g)
        self._add(Criterion("7", "Legendre duality", bool(rt <= tol["legendre"] and conv["passed"]), rt,
                            tol["legendre"], detail={"convexity": conv,
                                                     "min_coverage": min(x["coverage"] for x in inv)}))
        # 8: Prop 3.1 at t = 1
        haus, hb = {}, {}
        for r in PROP31_RADII:
            m = hmae.omega_t_of_fibre(g, r, 1.0)
            haus[r] = hmae.region_hausdorff(grid, m, r) / self.h
            hb[r] = hmae.h_on_boundary(g, r)
        ok8 = max(haus.values()) <= tol["prop31_hausdorff_cells"] and max(hb.values()) <= tol["h_boundary"]
        self._add(Criterion("8", "f(D_r) = Omega_1(phi_r)", bool(ok8), max(haus.values()), tol["prop31_hausdorff_cells"],
                            detail={"hausdorff_cells": haus, "h_on_boundary": hb, "h_tol": tol["h_boundary"]}))
        # 9: boundary recovery
        # exact at s = 0 on the chart unknowns (ghosts are interpolated)
        exact0 = max(float(np.abs(g.tilde[0].chart(c) - self.phi.chart(c))[grid.active].max()) for c in CHARTS)
        br = hmae.boundary_recovery(g)
        devs = [x["deviation"] for x in br]
        mono = all(a <= b for a, b in zip(devs, devs[1:]))
        self._add(Criterion("9", "boundary recovery", bool(exact0 <= g.fp_tol and devs[0] <= tol["boundary"] and mono),
                            devs[0], tol["boundary"], detail={"s0_error": exact0, "cluster": br}))
        if self.export and "hmae" in self.cfg["run.stages"]:
            d = self._dir("hmae")
            for k, x in enumerate(g.tilde):
                gridio.dump_function(x, d / "tilde", f"tilde_{k:03d}")
            for r in PROP31_RADII:
                gridio.dump_function(hmae.to_boundary_problem(g, r), d / "phi", f"Phi_r{r:.2f}")
            (d / "degeneracy.json").write_text(json.dumps(_jsonable({
                "schema_version": SCHEMA_VERSION, "degeneracy_tol": tol["degeneracy"],
                "s_grid": g.s_grid, "slices": [asdict(r) for r in rows]}), indent=1))
            with open(d / "S_boundaries.csv", "w", newline="") as fh:
                conformal.polylines_csv([(r, [conformal.boundary_polyline(r)]) for r in PROP31_RADII], fh)
        return g

    def oracle(self):
        return self._once("oracle", self._oracle)

    def _oracle(self):
        g, psi1 = self.geodesic(), self.envelopes()[-1].psi
        k = self.potential()[0]
        gc = p1grid(self.grid.R, self.cfg["oracle.n"])
        try:
            sol = hmae.direct_perron_oracle(build_phi(gc, k, check=False), self.cfg["oracle.r_points"],
                                            tol=self.cfg["oracle.tol"], cone=self.cfg["oracle.cone"])
            rep = hmae.oracle_report(g, sol, psi1)
            ok = rep["max_gap"] <= self.tol["oracle"]
        except (RuntimeError, ValueError) as exc:
            log.error("oracle failed: %s", exc)
            rep, ok = {"error": str(exc), "max_gap": float("inf")}, False
        self._add(Criterion("10", "Perron oracle equivalence", bool(ok), rep["max_gap"], self.tol["oracle"], detail=rep))
        return rep

    # -- driver ------------------------------------------------------------
    def run(self, stages=None):
        stages = list(self.cfg["run.stages"] if stages is None else stages)
        for s in STAGES:
            if s in stages and s != "report":
                getattr(self, s)()
        rep = self.report()
        if "report" in stages:
            self._dir()
            (self.out / "report.json").write_text(json.dumps(rep, indent=1, sort_keys=True))
            (self.out / "timings.json").write_text(json.dumps(_jsonable(self.timings), indent=1))
        return rep

    def report(self):
        hard_fail = [c.id for c in self.criteria if c.hard and not c.passed]
        soft_fail = [c.id for c in self.criteria if not c.hard and not c.passed]
        status = EXIT_HARD if hard_fail else (EXIT_SOFT if soft_fail else EXIT_OK)
        return _jsonable({
            "schema_version": SCHEMA_VERSION,
            "config_hash": self.cfg.hash(),
            "config": self.cfg.semantic(),
            "tolerances": self.tol,
            "criteria": [asdict(c) for c in sorted(self.criteria, key=_order)],
            "hard_failures": hard_fail,
            "soft_failures": soft_fail,
            "exit_status": status,
        })


def _order(c: Criterion):
    return (0, int(c.id), "") if c.id.isdigit() else (1, 0, c.id)


STUDY_METRICS = {
    "psi1": ("1", "value"),
    "mass": ("3", "value"),
    "closed_form": ("5", "value"),
    "prop26": ("6", "value"),
    "legendre": ("7", "value"),
    "boundary": ("9", "value"),
}


def convergence_study(config: RunConfig, levels=3, out=None, floor=FP_FLOOR):
    """Run at n, 2n-1, 4n-3, ... and fit the decay of every error metric.

    Returns the study dict; fitted tolerances (2x the finest error) are
    written to ``out/fitted_tolerances.json``.  An error that grows under
    refinement (above ``floor``) marks the study failed.
    """
    if levels < 3:
        raise ValueError("the study needs at least 3 refinement levels")
    out = Path(out if out is not None else config["run.out"])
    n0 = config["grid.n"]
    ns = [(n0 - 1) * 2 ** j + 1 for j in range(levels)]
    rows = []
    for n in ns:
        cfg = config.with_overrides(**{"grid__n": n, "run__stages": ["potential", "envelopes", "heleshaw", "hmae"]})
        p = Pipeline(cfg, out=out / f"n{n}", export=False)
        p.run(stages=["envelopes", "heleshaw", "hmae"])
        vals = {c.id: c.value for c in p.criteria}
        rows.append({"n": n, "h": p.h, **{m: vals[cid] for m, (cid, _) in STUDY_METRICS.items()}})
    fit, fitted, failures = {}, {}, []
    for m in STUDY_METRICS:
        e = np.array([r[m] for r in rows])
        h = np.array([r["h"] for r in rows])
        pos = e > floor
        rate = float(np.polyfit(np.log(h[pos]), np.log(e[pos]), 1)[0]) if pos.sum() >= 2 else None
        decreasing = bool(np.all((e[1:] < e[:-1]) | (e[1:] <= floor)))
        fit[m] = {"errors": e.tolist(), "order": rate, "decreasing": decreasing}
        fitted[m] = float(max(2.0 * e[-1], floor))
        if not decreasing:
            failures.append(m)
    out.mkdir(parents=True, exist_ok=True)
    (out / "fitted_tolerances.json").write_text(json.dumps(fitted, indent=1, sort_keys=True))
    study = {"schema_version": SCHEMA_VERSION, "levels": rows, "fit": fit, "failures": failures,
             "passed": not failures}
    (out / "study.json").write_text(json.dumps(_jsonable(study), indent=1))
    return study
