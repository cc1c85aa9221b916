"""Run configuration: a flat TOML file of namespaced keys.

Every tolerance lives here.  A fitted-tolerance file (written by the
convergence study) overrides the ``tol.*`` defaults.  The config hash covers
the semantic keys only, so output directory, thread count and cache policy
do not change it.
"""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

STAGES = ("potential", "envelopes", "heleshaw", "conformal", "hmae", "oracle", "report")

DEFAULTS = {
    "grid.n": 257,
    "grid.R": 4.0,
    "potential.delta": 0.6,
    "potential.margin": 0.7,
    "t_grid.points": 65,
    "t_grid.tail": list(range(7, 17)),
    "s_grid.s_max": 8.0,
    "s_grid.uniform": 33,
    "s_grid.cluster": 8,
    "s_grid.first": 0.25,
    "solver.mode": "rb",
    "oracle.n": 65,
    "oracle.r_points": 17,
    "oracle.cone": 5.0,
    "oracle.tol": 1e-8,
    "tol.psi1": 2e-2,
    "tol.omega1_hausdorff_cells": 2.0,
    "tol.mass": 2e-2,
    "tol.nesting_cells": 1.0,
    "tol.degeneracy": 5e-3,
    "tol.degeneracy_coverage": 0.99,
    "tol.closed_form": 3e-2,
    "tol.prop26": 3e-2,
    "tol.legendre": 3e-2,
    "tol.prop31_hausdorff_cells": 3.0,
    "tol.h_boundary": 5e-2,
    "tol.boundary": 5e-2,
    "tol.oracle": 5e-2,
    "tol.equality_hausdorff_cells": 2.0,
    "run.stages": list(STAGES),
    "run.out": "hmae_out",
    "run.threads": 1,
    "run.cache": True,
    "run.tolerance_file": "",
}

#: keys that do not change results
NON_SEMANTIC = {"run.out", "run.threads", "run.cache", "run.stages"}


class ConfigError(ValueError):
    pass


def _flatten(tree, prefix=""):
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _check(key, value):
    ref = DEFAULTS[key]
    if isinstance(ref, bool):
        ok = isinstance(value, bool)
    elif isinstance(ref, (int, float)):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(ref, list):
        ok = isinstance(value, list)
    else:
        ok = isinstance(value, type(ref))
    if not ok:
        raise ConfigError(f"{key}: expected {type(ref).__name__}, got {value!r}")
    if isinstance(ref, float) and isinstance(value, int):
        value = float(value)
    return value


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))

    def __getitem__(self, key):
        return self.values[key]

    def __post_init__(self):
        unknown = set(self.values) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown keys: {', '.join(sorted(unknown))}")
        merged = dict(DEFAULTS)
        for k, v in self.values.items():
            merged[k] = _check(k, v)
        self.values = merged
        n = self.values["grid.n"]
        if n % 2 == 0 or n < 9:
            raise ConfigError(f"grid.n must be odd and >= 9, got {n}")
        bad = [s for s in self.values["run.stages"] if s not in STAGES]
        if bad:
            raise ConfigError(f"unknown stages: {', '.join(bad)}")
        if self.values["run.threads"] < 1:
            raise ConfigError("run.threads must be >= 1")

    @classmethod
    def from_file(cls, path):
        try:
            tree = tomllib.loads(Path(path).read_text())
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        return cls(_flatten(tree))

    def with_overrides(self, **kv):
        vals = dict(self.values)
        vals.update({k.replace("__", "."): v for k, v in kv.items()})
        return RunConfig(vals)

    def semantic(self):
        return {k: v for k, v in sorted(self.values.items()) if k not in NON_SEMANTIC}

    def hash(self, prefixes=None):
        """sha256 over the semantic keys (optionally only those under ``prefixes``)."""
        sem = self.semantic()
        if prefixes is not None:
            sem = {k: v for k, v in sem.items() if k.split(".")[0] in prefixes}
        blob = json.dumps(sem, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def tolerances(self):
        """``tol.*`` values with the fitted-tolerance file applied."""
        tol = {k[4:]: v for k, v in self.values.items() if k.startswith("tol.")}
        path = self.values["run.tolerance_file"]
        if path:
            try:
                fitted = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read tolerance file {path}: {exc}") from exc
            for k, v in fitted.items():
                if k not in tol:
                    raise ConfigError(f"tolerance file names unknown tolerance {k}")
                tol[k] = float(v)
        return tol

    def to_toml(self):
        """Flat file with one quoted dotted key per line (sorted)."""
        return tomli_w.dumps({k: v for k, v in sorted(self.values.items())})
