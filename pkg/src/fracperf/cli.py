"""Batch front door: JSON config in, CSV/JSON/SVG out.

Subcommands: capacity, cell, solve, effective, study.  Every run is a pure
function of the config bytes, so re-running a command on the same file
yields byte-identical artifacts.  Exit codes: 0 success, 2 config error,
3 numerical failure, 4 acceptance-gate failure under --check.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import capacity as cap
from . import cell as cellmod
from . import grids, homogenize, solver
from .numerics import FractionalOrder
from .perforations import GammaLaw, export_perforations
from .reporting import write_csv, write_json

SCHEMA_VERSION = 1

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4


class ConfigError(Exception):
    pass


class CheckFailure(Exception):
    pass


def _require_keys(obj, allowed, required, where):
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")
    missing = set(required) - set(obj)
    if missing:
        raise ConfigError(f"missing key(s) {sorted(missing)} in {where}")


def _load_config(path):
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from err
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be an object")
    if cfg.get("version") != SCHEMA_VERSION:
        raise ConfigError(
            f"config version {cfg.get('version')!r} does not match schema version {SCHEMA_VERSION}"
        )
    return cfg


def _parse_order(obj):
    _require_keys(obj, {"n", "s"}, {"n", "s"}, "order")
    try:
        return FractionalOrder(int(obj["n"]), float(obj["s"]))
    except ValueError as err:
        raise ConfigError(str(err)) from err


def _parse_law(obj):
    _require_keys(
        obj, {"kind", "gamma", "lo", "hi", "p", "gamma_on", "gamma_lower"}, {"kind"}, "law"
    )
    kind = obj["kind"]
    try:
        if kind == "constant":
            return GammaLaw.constant(float(obj.get("gamma", 0.0)),
                                     gamma_lower=obj.get("gamma_lower"))
        if kind == "uniform":
            return GammaLaw.uniform(float(obj["lo"]), float(obj["hi"]),
                                    gamma_lower=obj.get("gamma_lower"))
        if kind == "bernoulli":
            return GammaLaw.bernoulli(float(obj["p"]), float(obj["gamma_on"]))
    except (KeyError, ValueError) as err:
        raise ConfigError(f"bad law: {err}") from err
    raise ConfigError(f"unknown law kind {kind!r}")


def _parse_obstacle(obj):
    _require_keys(
        obj, {"kind", "value", "height", "curvature", "center", "xs", "vals"}, {"kind"}, "obstacle"
    )
    kind = obj["kind"]
    if kind == "constant":
        return homogenize.ObstacleSpec.constant(obj.get("value", 0.0))
    if kind == "bump":
        return homogenize.ObstacleSpec.bump(
            height=obj.get("height", 1.0),
            curvature=obj.get("curvature", 8.0),
            center=obj.get("center"),
        )
    if kind == "tabulated":
        return homogenize.ObstacleSpec.tabulated(obj["xs"], obj["vals"])
    raise ConfigError(f"unknown obstacle kind {kind!r}")


def _tolerances(cfg):
    t = cfg.get("tolerances", {})
    _require_keys(t, {"solver_tol", "max_sweeps", "relaxation"}, set(), "tolerances")
    return {
        "tol": float(t.get("solver_tol", 1e-9)),
        "max_sweeps": int(t.get("max_sweeps", 200_000)),
    }


def _constants(order, cfg_section):
    npd = int(cfg_section.get("calibration_nodes", 48))
    return cap.calibrated_constants(order, nodes_per_diameter=npd)


# -- capacity ----------------------------------------------------------------


def _parse_set(obj, n, where):
    _require_keys(obj, {"name", "intervals", "disks"}, {"name"}, where)
    if n == 1:
        if "intervals" not in obj:
            raise ConfigError(f"{where}: n=1 sets need 'intervals'")
        return obj["name"], cap.BoundarySet.intervals(obj["intervals"])
    if "disks" not in obj:
        raise ConfigError(f"{where}: n=2 sets need 'disks'")
    return obj["name"], cap.BoundarySet(2, tuple(tuple(map(float, d)) for d in obj["disks"]))


def cmd_capacity(cfg, outdir, threads, check):
    order = _parse_order(cfg.get("order", {}))
    section = cfg.get("capacity")
    if section is None:
        raise ConfigError("missing 'capacity' section")
    _require_keys(
        section,
        {"sets", "r_out_factors", "nodes_per_diameter", "probe_factors", "scaling_factor",
         "calibration_nodes"},
        {"sets"},
        "capacity",
    )
    factors = tuple(section.get("r_out_factors", (8.0, 16.0, 32.0)))
    npd = int(section.get("nodes_per_diameter", 24))
    probes = tuple(section.get("probe_factors", (2.0, 3.0, 4.0)))
    constants = _constants(order, section)

    sets = [_parse_set(s, order.n, f"capacity.sets[{i}]") for i, s in enumerate(section["sets"])]
    cap_rows, ff_rows, report = [], [], {"sets": {}}
    for name, bset in sets:
        est = cap.estimate_capacity(bset, order, r_out_factors=factors, nodes_per_diameter=npd)
        for r_half, nx, ny, raw in est.raw:
            cap_rows.append([name, r_half, nx, ny, raw, 0])
        cap_rows.append([name, 0.0, 0, 0, est.value, 1])
        table = cap.far_field_check(
            bset, order, constants,
            probe_factors=probes, r_out_factor=max(factors), nodes_per_diameter=npd,
        )
        for rho, ratio in table:
            ff_rows.append([name, rho, ratio])
        report["sets"][name] = {
            "capacity": est.value,
            "far_field_outermost": table[-1][1],
        }

    scaling = section.get("scaling_factor")
    if scaling is not None:
        lam = float(scaling)
        base = sets[0][1]
        scaled = cap.BoundarySet(
            base.n,
            tuple(
                tuple(lam * v for v in comp) if base.n == 1 else
                (comp[0] * lam, comp[1] * lam, comp[2] * lam)
                for comp in base.components
            ),
        )
        e1 = cap.estimate_capacity(base, order, r_out_factors=factors, nodes_per_diameter=npd)
        e2 = cap.estimate_capacity(scaled, order, r_out_factors=factors, nodes_per_diameter=npd)
        ratio = e2.value / e1.value
        expected = lam**order.ext_exp
        cap_rows.append(["scaling_ratio", lam, 0, 0, ratio, 1])
        report["scaling"] = {"factor": lam, "ratio": ratio, "expected": expected}

    write_csv(os.path.join(outdir, "capacity.csv"),
              ["set", "r_out", "nx", "ny", "capacity", "extrapolated"], cap_rows)
    write_csv(os.path.join(outdir, "far_field.csv"), ["set", "rho", "ratio"], ff_rows)
    write_json(os.path.join(outdir, "capacity_report.json"), report)

    if check:
        if scaling is not None:
            if abs(report["scaling"]["ratio"] / report["scaling"]["expected"] - 1.0) > 0.05:
                raise CheckFailure("capacity scaling ratio off by more than 5%")
        for name, info in report["sets"].items():
            if not 0.9 <= info["far_field_outermost"] <= 1.1:
                raise CheckFailure(f"far-field ratio for set {name!r} outside [0.9, 1.1]")


# -- cell --------------------------------------------------------------------


def _parse_cell_grid(obj):
    _require_keys(
        obj, {"nodes_per_cell", "ny", "slab_factor", "grading", "bc", "method"}, set(), "cell.grid"
    )
    try:
        return cellmod.CellGridParams(
            nodes_per_cell=int(obj.get("nodes_per_cell", 16)),
            ny=int(obj.get("ny", 64)),
            slab_factor=float(obj.get("slab_factor", 2.0)),
            grading=obj.get("grading"),
            bc=obj.get("bc", "periodic"),
            method=obj.get("method", "active_set"),
        )
    except ValueError as err:
        raise ConfigError(str(err)) from err


def cmd_cell(cfg, outdir, threads, check):
    order = _parse_order(cfg.get("order", {}))
    section = cfg.get("cell")
    if section is None:
        raise ConfigError("missing 'cell' section")
    _require_keys(
        section,
        {"law", "window", "seeds", "theta", "tol_alpha", "alphas", "grid", "alpha_max",
         "calibration_nodes"},
        {"law", "seeds"},
        "cell",
    )
    law = _parse_law(section["law"])
    T = int(section.get("window", 8))
    seeds = [int(s) for s in section["seeds"]]
    theta = float(section.get("theta", 0.01))
    tol_alpha = float(section.get("tol_alpha", 0.02))
    params = _parse_cell_grid(section.get("grid", {}))
    constants = _constants(order, section)

    rows = []
    for alpha in section.get("alphas", []):
        for seed in seeds:
            run = cellmod.solve_cell(float(alpha), T, law, order, constants, params, seed=seed)
            rows.append([float(alpha), T, seed, run.contact_fraction])
    write_csv(os.path.join(outdir, "ell_curve.csv"),
              ["alpha", "window", "seed", "contact_fraction"], rows)

    est = cellmod.estimate_alpha0(
        law, order, constants, params, T=T, seeds=seeds, theta=theta,
        tol_alpha=tol_alpha, alpha_max=float(section.get("alpha_max", 64.0)),
        threads=threads,
    )
    fb = cellmod.flux_balance_alpha(law, order, constants)
    payload = est.as_dict()
    payload["flux_balance_alpha"] = fb
    payload["window"] = T
    payload["seeds"] = seeds
    write_json(os.path.join(outdir, "alpha0.json"), payload)

    if check:
        for alpha, _, _, frac in rows:
            if alpha < 0.0 and frac != 0.0:
                raise CheckFailure(f"contact fraction {frac} at negative alpha {alpha}")
        if law.gamma_bar == 0.0 and est.alpha0 > tol_alpha:
            raise CheckFailure("alpha0 should vanish for a massless law")


# -- solve / effective / study -----------------------------------------------

_STUDY_KEYS = {
    "law", "obstacle", "eps", "seeds", "sigma", "slab_height", "ny", "grading",
    "nodes_per_radius", "alpha0", "wall_value", "cell_window", "cell_seeds",
    "theta", "tol_alpha", "calibration_nodes", "eps_one", "seed", "method",
}


def _study_config(cfg, section, threads, single=False):
    order = _parse_order(cfg.get("order", {}))
    _require_keys(section, _STUDY_KEYS, {"law", "obstacle"}, "study")
    tols = _tolerances(cfg)
    constants = _constants(order, section)
    eps_list = tuple(float(e) for e in section.get("eps", (0.25, 0.125, 0.0625)))
    try:
        return homogenize.StudyConfig(
            order=order,
            constants=constants,
            law=_parse_law(section["law"]),
            obstacle=_parse_obstacle(section["obstacle"]),
            eps_list=eps_list,
            seeds=tuple(int(s) for s in section.get("seeds", (0, 1, 2, 3))),
            sigma=tuple(section.get("sigma", (0.0, 1.0))),
            wall_value=float(section.get("wall_value", 0.0)),
            slab_height=float(section.get("slab_height", 0.5)),
            ny=int(section.get("ny", 64)),
            grading=section.get("grading"),
            nodes_per_radius=int(section.get("nodes_per_radius", 8)),
            alpha0=section.get("alpha0"),
            cell_window=int(section.get("cell_window", 8)),
            cell_seeds=tuple(int(s) for s in section.get("cell_seeds", range(8))),
            theta=float(section.get("theta", 0.01)),
            tol_alpha=float(section.get("tol_alpha", 0.02)),
            tol=tols["tol"],
            max_sweeps=tols["max_sweeps"],
            method=section.get("method", "active_set"),
            threads=threads,
        )
    except ValueError as err:
        raise ConfigError(str(err)) from err


def cmd_solve(cfg, outdir, threads, check):
    section = cfg.get("solve")
    if section is None:
        raise ConfigError("missing 'solve' section")
    config = _study_config(cfg, section, threads)
    eps = float(section.get("eps_one", min(config.eps_list)))
    seed = int(section.get("seed", 0))
    g, pset, mask, sol = homogenize.solve_perforated(config, eps, seed)
    grids.export_field(sol.field, os.path.join(outdir, "field.csv"))
    export_perforations(pset, os.path.join(outdir, "perforations.csv"))
    write_json(
        os.path.join(outdir, "solve_report.json"),
        {
            "eps": eps, "seed": seed, "energy": sol.energy,
            "iterations": sol.iterations, "kkt_residual": sol.kkt_residual,
            "constrained_nodes": int(np.sum(mask)),
            "contact_nodes": int(np.sum(sol.contact_mask)),
        },
    )


def cmd_effective(cfg, outdir, threads, check):
    section = cfg.get("effective")
    if section is None:
        raise ConfigError("missing 'effective' section")
    config = _study_config(cfg, section, threads)
    if config.alpha0 is None:
        raise ConfigError("'effective' requires an explicit alpha0")
    g, sol = homogenize.solve_effective(config, float(config.alpha0))
    grids.export_field(sol.field, os.path.join(outdir, "field.csv"))
    write_json(
        os.path.join(outdir, "effective_report.json"),
        {
            "alpha0": config.alpha0,
            "energy": sol.energy,
            "effective_energy": homogenize.effective_energy(config, float(config.alpha0), g, sol),
            "iterations": sol.iterations,
            "kkt_residual": sol.kkt_residual,
        },
    )


def cmd_study(cfg, outdir, threads, check):
    section = cfg.get("study")
    if section is None:
        raise ConfigError("missing 'study' section")
    config = _study_config(cfg, section, threads)
    try:
        report = homogenize.run_study(config)
    except homogenize.StudyError as err:
        rows = [
            [r["eps"], r["seed"], r["energy_eps"], r["energy_eff"], r["l2_bulk"],
             r["l2_trace"], r["contact_frac"]]
            for r in err.partial_rows
        ]
        write_csv(os.path.join(outdir, "study_partial.csv"), homogenize.STUDY_HEADER, rows)
        raise
    homogenize.write_study_outputs(report, outdir)

    if check:
        if config.law.gamma_bar == 0.0:
            worst = max(s["l2_trace_mean"] for s in report.eps_stats)
            if worst > 10.0 * config.tol:
                raise CheckFailure(f"trivial study left residual distance {worst}")
        else:
            tr = [s["l2_trace_mean"] for s in report.eps_stats]
            gp = [s["energy_gap_mean"] for s in report.eps_stats]
            for name, vals in (("trace distance", tr), ("energy gap", gp)):
                for prev, nxt in zip(vals, vals[1:]):
                    if not nxt < prev * 1.10:
                        raise CheckFailure(f"{name} not decreasing along the sweep: {vals}")


COMMANDS = {
    "capacity": cmd_capacity,
    "cell": cmd_cell,
    "solve": cmd_solve,
    "effective": cmd_effective,
    "study": cmd_study,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fracperf",
        description="Obstacle problems over random perforations: capacity, cell and sweep studies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--check", action="store_true", help="apply acceptance gates")
    args = parser.parse_args(argv)

    try:
        cfg = _load_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        COMMANDS[args.command](cfg, args.out, max(1, args.threads), args.check)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckFailure as err:
        print(f"check failed: {err}", file=sys.stderr)
        return EXIT_CHECK
    except (solver.NonconvergenceError, solver.ProblemConfigError,
            homogenize.StudyError, cellmod.AlphaSearchError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
