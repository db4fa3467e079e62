"""Command-line laboratory: one subcommand per verification experiment.

Each run reads a JSON config (or the built-in defaults), applies ``--set``
overrides, runs the experiment and writes ``summary.json`` plus CSV series
into the output directory.  Exit status: 0 when every gated criterion
passes, 1 when one fails, 2 on a configuration error.
"""
from __future__ import annotations

import argparse
import copy
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import calculus, integral, kernel, studies
from .errors import ConfigError, StochInvError
from .integrate import euler_ensemble
from .io import write_csv, write_json
from .noise import TimeGrid, sample_noise
from .scenarios import get_field, get_field_process, get_scenario, list_scenarios
from .system import validate_scenario

# keys whose values are free-form parameter dictionaries
_OPEN_KEYS = {"params"}

_COMMON = {
    "scenario": {"name": "rot2d", "params": {}},
    "grid": {"t0": 0.0, "T": 1.0, "n_steps": 256},
    "seeds": {"base": 0, "n_paths": 10},
    "x0": None,
    "out": "out",
}

DEFAULTS = {
    "simulate": {"with_jacobian": True},
    "check-ito": {
        "scenario": {"name": "bm1d", "params": {}},
        "field": {"name": "square", "params": {}},
        "seeds": {"base": 0, "n_paths": 1000},
        "levels": {"coarse_steps": 64, "n_levels": 4},
        "tolerances": {"slope": [0.4, 1.1]},
    },
    "check-ito-wentzel": {
        "process": {"name": "rot2d_mixed", "params": {}},
        "seeds": {"base": 0, "n_paths": 500},
        "levels": {"coarse_steps": 64, "n_levels": 4},
        "tolerances": {"slope_min": 0.4},
    },
    "kernel": {
        "scenario": {"name": "ou1d", "params": {"sigma": 0.0}},
        "grid": {"t0": 0.0, "T": 1.0, "n_steps": 1200},
        "kernels": [{"mean": 0.0, "std": 1.0}, {"mean": 0.5, "std": 1.2}],
        "spatial_nodes": 801,
        "x_range": None,
        "starts": [-1.0, 0.0, 0.5, 1.0],
        "n_cells": 400,
        "tolerances": {
            "volume_identity": 1e-13,
            "initial_mass": 1e-6,
            "grid_vs_characteristics": 5e-2,
            "grid_mass_drift": 1e-3,
            "grid_ratio": 5e-2,
            "characteristic_ratio": 1e-12,
        },
    },
    "first-integral": {
        "candidate": {"name": "radius2", "params": {}},
        "lattice": {"per_axis": 21, "times": [0.0]},
        "seeds": {"base": 0, "n_paths": 200},
        "levels": {"coarse_steps": 128, "n_levels": 3},
        "tolerances": {"residual": 1e-9, "oracle_slope_min": 0.25},
    },
    "convergence": {
        "study": "ou",
        "scenario": {"name": "ou1d", "params": {}},
        "field": {"name": "square", "params": {}},
        "process": {"name": "rot2d_mixed", "params": {}},
        "candidate": {"name": "radius2", "params": {}},
        "seeds": {"base": 0, "n_paths": 200},
        "levels": {"coarse_steps": 64, "n_levels": 4},
        "tolerances": {"slope": [0.7, 1.3]},
    },
    "validate": {
        "all": False,
        "per_axis": 5,
        "delta": 1e-5,
        "tolerances": {"derivative": 1e-6},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in _OPEN_KEYS:
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def default_config(experiment: str) -> dict:
    if experiment not in DEFAULTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    return _merge(_COMMON, DEFAULTS[experiment])


def _check_keys(cfg: dict, ref: dict, where: str):
    for k, v in cfg.items():
        loc = f"{where}.{k}" if where else k
        if k not in ref:
            raise ConfigError(f"unknown key {loc!r}")
        r = ref[k]
        if k in _OPEN_KEYS:
            if not isinstance(v, dict):
                raise ConfigError(f"{loc!r} must be an object")
            continue
        if isinstance(r, dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{loc!r} must be an object")
            _check_keys(v, r, loc)
        elif r is None:
            continue
        elif isinstance(r, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"{loc!r} must be true or false")
        elif isinstance(r, (int, float)):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{loc!r} must be a number")
            if isinstance(r, int) and not isinstance(r, bool) and int(v) != v:
                raise ConfigError(f"{loc!r} must be an integer")
        elif isinstance(r, str):
            if not isinstance(v, str):
                raise ConfigError(f"{loc!r} must be a string")
        elif isinstance(r, list):
            if not isinstance(v, list):
                raise ConfigError(f"{loc!r} must be a list")


def _set_dotted(cfg: dict, assignment: str):
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = value


def load_config(experiment: str, path: Optional[str] = None, sets=(), seed=None, out=None) -> dict:
    """Defaults, then the JSON file, then --set overrides, then --seed/--out."""
    ref = default_config(experiment)
    cfg = copy.deepcopy(ref)
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        data.pop("experiment", None)
        try:
            _check_keys(data, ref, "")
        except ConfigError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        cfg = _merge(cfg, data)
    for a in sets:
        _set_dotted(cfg, a)
    if seed is not None:
        cfg["seeds"]["base"] = int(seed)
    if out is not None:
        cfg["out"] = out
    try:
        _check_keys(cfg, ref, "")
    except ConfigError as exc:
        raise ConfigError(f"--set: {exc}") from exc
    return cfg


# ------------------------------------------------------------------ helpers

@dataclass
class Criterion:
    name: str
    value: float
    tolerance: Optional[str]
    passed: Optional[bool]

    def as_dict(self):
        return {"name": self.name, "value": self.value, "tolerance": self.tolerance, "pass": self.passed}


def at_most(name, value, tol) -> Criterion:
    value = float(value)
    return Criterion(name, value, f"<= {tol!r}", bool(value <= tol))


def at_least(name, value, tol) -> Criterion:
    value = float(value)
    return Criterion(name, value, f">= {tol!r}", bool(value >= tol))


def within(name, value, lo_hi) -> Criterion:
    lo, hi = lo_hi
    value = float(value)
    return Criterion(name, value, f"in [{lo!r}, {hi!r}]", bool(lo <= value <= hi))


def info(name, value) -> Criterion:
    return Criterion(name, float(value), None, None)


class Run:
    """Collects criteria and CSV tables for one experiment."""

    def __init__(self, experiment: str, cfg: dict):
        self.experiment = experiment
        self.cfg = cfg
        self.criteria: list[Criterion] = []
        self.tables: dict[str, tuple] = {}

    def add(self, c: Criterion):
        self.criteria.append(c)

    def table(self, name, header, rows):
        self.tables[name] = (list(header), [list(r) for r in rows])

    def write(self) -> Path:
        out = Path(self.cfg["out"])
        for name, (header, rows) in sorted(self.tables.items()):
            write_csv(out / f"{name}.csv", header, rows)
        write_json(out / "summary.json", {
            "experiment": self.experiment,
            "scenario": self.cfg["scenario"]["name"],
            "seed": self.cfg["seeds"]["base"],
            "criteria": [c.as_dict() for c in self.criteria],
        })
        return out

    @property
    def failures(self) -> list[Criterion]:
        return [c for c in self.criteria if c.passed is False]


def _scenario(cfg):
    try:
        return get_scenario(cfg["scenario"]["name"], **cfg["scenario"]["params"])
    except StochInvError as exc:
        raise ConfigError(f"scenario: {exc}") from exc


def _named(getter, cfg, key):
    try:
        return getter(cfg[key]["name"], **cfg[key]["params"])
    except StochInvError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def _x0(cfg, n):
    if cfg["x0"] is None:
        x0 = np.zeros(n)
        x0[0] = 1.0
        return x0
    x0 = np.asarray(cfg["x0"], dtype=float).reshape(-1)
    if x0.shape != (n,):
        raise ConfigError(f"x0: expected {n} components, got {x0.size}")
    return x0


def _grid(cfg) -> TimeGrid:
    g = cfg["grid"]
    try:
        return TimeGrid(g["t0"], g["T"], g["n_steps"])
    except StochInvError as exc:
        raise ConfigError(f"grid: {exc}") from exc


def _seeds(cfg):
    base, n = int(cfg["seeds"]["base"]), int(cfg["seeds"]["n_paths"])
    if n < 1 or base < 0:
        raise ConfigError("seeds: need base >= 0 and n_paths >= 1")
    return list(range(base, base + n))


def _study_table(run: Run, name: str, res: studies.StudyResult):
    run.table(name, ["h", "error"], [(h, e) for h, e in zip(res.hs, res.errors)])
    run.add(info(f"{res.name}_fit_residual", res.fit.residual))


def _levels(cfg):
    lv = cfg["levels"]
    return int(lv["coarse_steps"]), int(lv["n_levels"])


# -------------------------------------------------------------- experiments

def exp_simulate(run: Run):
    cfg = run.cfg
    s, grid = _scenario(cfg), _grid(cfg)
    x0 = _x0(cfg, s.n)
    noises = [sample_noise(grid, s.m, s.mark_space, sd) for sd in _seeds(cfg)]
    ens = euler_ensemble(s, x0, noises, with_jacobian=cfg["with_jacobian"])
    t = grid.times
    xs = [f"x{i + 1}" for i in range(s.n)]
    header = ["path", "step", "t"] + xs + (["det_J"] if cfg["with_jacobian"] else [])
    dets = ens.determinants() if cfg["with_jacobian"] else None
    rows = []
    for p in range(len(noises)):
        for k in range(grid.n_steps + 1):
            row = [p, k, t[k], *ens.states[p, k]]
            if dets is not None:
                row.append(dets[p, k])
            rows.append(row)
    run.table("paths", header, rows)
    jl = ens.jumps
    order = np.lexsort((jl.event_id, jl.path))
    run.table("jumps", ["path", "step", "time", "mark"] + [f"pre_{x}" for x in xs] + [f"post_{x}" for x in xs],
              [[jl.path[i], jl.step[i], jl.time[i], jl.mark[i], *jl.pre[i], *jl.post[i]] for i in order])
    run.add(at_most("diverged_paths", int(np.sum(~ens.ok)), 0))
    run.add(info("jacobian_warnings", len(ens.warnings)))


def exp_check_ito(run: Run):
    cfg = run.cfg
    s, f = _scenario(cfg), _named(get_field, cfg, "field")
    coarse, nl = _levels(cfg)
    seeds = _seeds(cfg)
    res = studies.ito_study(f, s, _x0(cfg, s.n), cfg["grid"]["T"], coarse, nl, len(seeds), seeds[0])
    _study_table(run, "ito_levels", res)
    run.add(within("ito_discrepancy_slope", res.fit.slope, cfg["tolerances"]["slope"]))
    # one representative series on the finest level
    nz = studies.nested_levels(s, cfg["grid"]["T"], coarse, nl, seeds[:1])[-1][0]
    path = euler_ensemble(s, _x0(cfg, s.n), nz).path(0)
    ser = calculus.ito_series(f, s, path, nz)
    t = nz.grid.times
    run.table("ito_series", ["step", "t", "increment", "cumulative", "direct"],
              [(k, t[k + 1], ser.increments[k], ser.cumulative[k], ser.direct[k + 1])
               for k in range(len(ser.increments))])


def exp_check_ito_wentzel(run: Run):
    cfg = run.cfg
    s, proc = _scenario(cfg), _named(get_field_process, cfg, "process")
    coarse, nl = _levels(cfg)
    seeds = _seeds(cfg)
    x0 = _x0(cfg, s.n)
    res = studies.wentzell_study(proc, s, x0, cfg["grid"]["T"], coarse, nl, len(seeds), seeds[0])
    _study_table(run, "wentzell_levels", res)
    run.add(at_least("composite_gap_slope", res.fit.slope, cfg["tolerances"]["slope_min"]))
    nz = studies.nested_levels(s, cfg["grid"]["T"], coarse, nl, seeds[:1])[-1][0]
    rep = calculus.composite_consistency(proc, s, x0, nz)
    run.table("composite_nodes", ["step", "t", "gap"],
              [(k, t, g) for k, (t, g) in enumerate(zip(nz.grid.times, rep.per_node))])
    run.add(info("terminal_gap_single_path", rep.terminal))


def exp_kernel(run: Run):
    cfg = run.cfg
    tol = cfg["tolerances"]
    s, grid = _scenario(cfg), _grid(cfg)
    if len(cfg["kernels"]) < 2:
        raise ConfigError("kernels: need at least two entries")
    try:
        kernels = [kernel.gaussian_kernel(k["mean"], k["std"], n=s.n) for k in cfg["kernels"]]
    except (KeyError, TypeError, StochInvError) as exc:
        raise ConfigError(f"kernels: each entry needs numeric 'mean' and 'std' ({exc})") from exc
    nz = sample_noise(grid, s.m, s.mark_space, _seeds(cfg)[0])
    rho0 = kernels[0]

    vol = kernel.volume_invariance(rho0, s, nz, int(cfg["n_cells"]))
    run.add(at_most("volume_identity_rel", abs(vol.pushforward_sum - vol.initial_sum) / abs(vol.initial_sum),
                    tol["volume_identity"]))
    run.add(at_most("initial_mass_error", abs(vol.initial_sum - 1.0), tol["initial_mass"]))

    starts = np.asarray(cfg["starts"], dtype=float).reshape(-1, s.n) if s.n == 1 else [_x0(cfg, s.n)]
    y = np.asarray(starts[0], dtype=float).reshape(s.n)
    kp = kernel.kernel_along_path(rho0, s, y, nz)
    run.table("kernel_path", ["step", "t"] + [f"x{i + 1}" for i in range(s.n)] + ["det_J", "rho"],
              [(k, grid.times[k], *kp.states[k], kp.dets[k], kp.values[k]) for k in range(len(kp.values))])
    chr_ratio = kernel.kernel_ratio_integrals(kernels, s, y, nz)
    run.add(at_most("characteristic_ratio_deviation", float(np.max(chr_ratio.deviation)),
                    tol["characteristic_ratio"]))

    if s.n == 1 and s.m <= 1:
        N = int(cfg["spatial_nodes"])
        xr = cfg["x_range"]
        sols = [kernel.kernel_spde_solve(r, s, nz, N, xr) for r in kernels]
        sol = sols[0]
        err = kernel.grid_vs_characteristics(rho0, s, starts[:, 0], nz, N, sol)
        run.add(at_most("grid_vs_characteristics", err, tol["grid_vs_characteristics"]))
        mass = sol.mass()
        run.add(at_most("grid_mass_drift", float(np.max(np.abs(mass - mass[0]))), tol["grid_mass_drift"]))
        pts = kp.states[:, 0]
        vals = np.stack([[sl.at(k, pts[k]) for k in range(len(pts))] for sl in sols], axis=-1)
        ratios = vals[:, :-1] / vals[:, -1:]
        run.add(at_most("grid_ratio_deviation", float(np.max(np.abs(ratios - ratios[0]))), tol["grid_ratio"]))
        run.add(info("grid_min_value", float(sol.values.min())))
        run.table("grid_terminal", ["x", "rho_T"], zip(sol.x, sol.values[-1]))
        run.table("ratios", ["step", "t", "x"] + [f"theta{l + 1}" for l in range(ratios.shape[1])],
                  [(k, grid.times[k], pts[k], *ratios[k]) for k in range(len(pts))])


def exp_first_integral(run: Run):
    cfg = run.cfg
    tol = cfg["tolerances"]
    s = _scenario(cfg)
    u = integral.as_candidate(_named(get_field, cfg, "candidate"))
    lat = s.lattice(int(cfg["lattice"]["per_axis"]), centered=False)
    rep = integral.check_conditions(u, s, lat, cfg["lattice"]["times"], tol["residual"])
    for name, v in rep.residuals.items():
        run.add(at_most(name, v, tol["residual"]))
    run.add(info("R3_preimage", rep.R3_preimage))
    run.table("conditions", ["condition", "sup_residual"], list(rep.residuals.items()))

    x0 = _x0(cfg, s.n)
    coarse, nl = _levels(cfg)
    seeds = _seeds(cfg)
    res = studies.conservation_study(u, s, x0, cfg["grid"]["T"], coarse, nl, len(seeds), seeds[0])
    _study_table(run, "oracle_levels", res)
    run.add(at_least("oracle_slope", res.fit.slope, tol["oracle_slope_min"]))
    run.add(info("oracle_finest_mean_deviation", res.errors[-1]))

    nz = sample_noise(_grid(cfg), s.m, s.mark_space, seeds[0])
    ser = integral.eq35_residual_series(u, s, x0, nz)
    run.add(info("eq35_terminal", ser.terminal))
    t = nz.grid.times
    run.table("eq35_series", ["step", "t", "increment", "cumulative"],
              [(k, t[k + 1], ser.increments[k], ser.cumulative[k]) for k in range(len(ser.increments))])


def exp_convergence(run: Run):
    cfg = run.cfg
    s = _scenario(cfg)
    coarse, nl = _levels(cfg)
    seeds = _seeds(cfg)
    x0 = _x0(cfg, s.n)
    T = cfg["grid"]["T"]
    study = cfg["study"]
    if study == "ou":
        if s.n != 1:
            raise ConfigError("study 'ou' needs a one-dimensional scenario")
        res = studies.ou_strong_convergence(s, float(x0[0]), T, coarse, nl, len(seeds), seeds[0])
    elif study == "ito":
        res = studies.ito_study(_named(get_field, cfg, "field"), s, x0, T, coarse, nl, len(seeds), seeds[0])
    elif study == "wentzell":
        res = studies.wentzell_study(_named(get_field_process, cfg, "process"), s, x0, T, coarse, nl,
                                     len(seeds), seeds[0])
    elif study == "conservation":
        res = studies.conservation_study(_named(get_field, cfg, "candidate"), s, x0, T, coarse, nl,
                                         len(seeds), seeds[0])
    else:
        raise ConfigError(f"study: unknown value {study!r} (ou, ito, wentzell, conservation)")
    _study_table(run, "levels", res)
    run.add(within(f"{res.name}_slope", res.fit.slope, cfg["tolerances"]["slope"]))


def exp_validate(run: Run):
    cfg = run.cfg
    names = list_scenarios() if cfg["all"] else [cfg["scenario"]["name"]]
    rows = []
    worst = 0.0
    for name in names:
        s = _scenario(cfg) if not cfg["all"] else get_scenario(name)
        rep = validate_scenario(s, s.lattice(int(cfg["per_axis"])), delta=cfg["delta"],
                                tol=cfg["tolerances"]["derivative"])
        for c in rep.checks:
            rows.append((name, c.coefficient, c.max_error))
        worst = max(worst, rep.max_error)
    run.table("derivative_checks", ["scenario", "coefficient", "max_error"], rows)
    run.add(at_most("max_derivative_error", worst, cfg["tolerances"]["derivative"]))


EXPERIMENTS = {
    "simulate": exp_simulate,
    "check-ito": exp_check_ito,
    "check-ito-wentzel": exp_check_ito_wentzel,
    "kernel": exp_kernel,
    "first-integral": exp_first_integral,
    "convergence": exp_convergence,
    "validate": exp_validate,
}


def run_experiment(experiment: str, cfg: dict) -> Run:
    run = Run(experiment, cfg)
    EXPERIMENTS[experiment](run)
    return run


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stochinv", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="base seed (overrides seeds.base)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a dotted config key; VALUE is parsed as JSON when possible")
        p.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.experiment, args.config, args.set, args.seed, args.out)
        if args.print_config:
            print(json.dumps(cfg, indent=2))
            return 0
        run = run_experiment(args.experiment, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = run.write()
    for c in run.criteria:
        mark = "info" if c.passed is None else ("PASS" if c.passed else "FAIL")
        tol = "" if c.tolerance is None else f" (tolerance {c.tolerance})"
        print(f"[{mark}] {c.name} = {c.value:.6g}{tol}")
    print(f"wrote {out}")
    if run.failures:
        names = ", ".join(c.name for c in run.failures)
        print(f"failed criterion: {names}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
