"""Command line: ``hmaelab run|study|report|export``.

Exit codes: 0 all criteria pass, 2 only reported (soft) checks deviate,
3 a hard criterion or stage invariant fails, 4 configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import gridio
from .config import STAGES, ConfigError, RunConfig
from .pipeline import EXIT_CONFIG, EXIT_HARD, EXIT_OK, Pipeline, StageError, convergence_study

log = logging.getLogger("hmaelab")


def _config(args):
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    over = {}
    if getattr(args, "stages", None):
        over["run__stages"] = [s.strip() for s in args.stages.split(",") if s.strip()]
    if args.out:
        over["run__out"] = args.out
    if getattr(args, "threads", None):
        over["run__threads"] = args.threads
    if getattr(args, "cache", None) is not None:
        over["run__cache"] = args.cache
    return cfg.with_overrides(**over) if over else cfg


def _print_report(rep, fh=None):
    fh = fh or sys.stdout
    for c in rep["criteria"]:
        flag = "PASS" if c["passed"] else ("FAIL" if c["hard"] else "WARN")
        val = c["value"]
        val = f"{val:.4g}" if isinstance(val, float) else str(val)
        print(f"[{flag}] {c['id']:>18}  {c['name']:<36} value={val} tol={c['tolerance']:.4g}", file=fh)
    print(f"exit status {rep['exit_status']}", file=fh)


def cmd_run(args):
    cfg = _config(args)
    p = Pipeline(cfg)
    rep = p.run()
    _print_report(rep)
    return rep["exit_status"]


def cmd_study(args):
    cfg = _config(args)
    study = convergence_study(cfg, levels=args.levels)
    for m, f in study["fit"].items():
        order = "n/a" if f["order"] is None else f"{f['order']:.2f}"
        errs = ", ".join(f"{e:.3g}" for e in f["errors"])
        print(f"{m:<12} errors [{errs}] order {order} {'ok' if f['decreasing'] else 'NOT DECREASING'}")
    return EXIT_OK if study["passed"] else EXIT_HARD


def cmd_report(args):
    path = Path(args.out or RunConfig()["run.out"]) / "report.json"
    try:
        rep = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"no readable report at {path}: {exc}") from exc
    _print_report(rep)
    return rep["exit_status"]


def cmd_export(args):
    root = Path(args.out or RunConfig()["run.out"])
    files = sorted(root.rglob("*.grd"))
    if not files:
        raise ConfigError(f"no grid dumps under {root}")
    for f in files:
        cg, _ = gridio.read_chart(f)
        with open(f.with_suffix(".csv"), "w", newline="") as fh:
            gridio.chart_csv(cg, fh)
    print(f"wrote {len(files)} CSV files under {root}")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="hmaelab", description="Geodesic rays and Hele-Shaw flow on P^1.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, run_flags=True):
        p.add_argument("--config", help="flat TOML configuration file")
        p.add_argument("--out", help="output directory")
        if run_flags:
            p.add_argument("--stages", help=f"comma-separated subset of {','.join(STAGES)}")
            p.add_argument("--threads", type=int, help="threads for compiled kernels")
            p.add_argument("--cache", action=argparse.BooleanOptionalAction, default=None,
                           help="reuse solved envelopes keyed by the config hash")

    common(sub.add_parser("run", help="run the pipeline and write the acceptance report"))
    st = sub.add_parser("study", help="convergence study at n, 2n-1, 4n-3")
    common(st)
    st.add_argument("--levels", type=int, default=3)
    common(sub.add_parser("report", help="print a stored acceptance report"), run_flags=False)
    common(sub.add_parser("export", help="write CSV (i, j, re, im, value) for every grid dump"), run_flags=False)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": cmd_run, "study": cmd_study, "report": cmd_report, "export": cmd_export}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_HARD


if __name__ == "__main__":
    sys.exit(main())
