"""End-to-end homogenization experiment.

For a shrinking sequence of lattice spacings eps, the membrane is pinned
above the obstacle on the sampled perforations only; the limiting behaviour
is captured by a single effective problem in which the perforations are
replaced by the one-sided boundary penalty 0.5 * alpha0 * (u - phi)_-^2.
The study solves both sides, measures weighted-L2 and boundary-trace
distances after injection to the finest grid, and tracks the energy gap

    | J(u_eps) - J_alpha(u_bar) |

which the limit theory sends to zero (no rate is asserted; the sweep only
checks a decreasing trend).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import cell, grids, solver
from .numerics import FractionalOrder, NormalizationConstants
from .perforations import GammaLaw, rasterize, sample
from .reporting import write_csv, write_json, write_svg_loglog

logger = logging.getLogger(__name__)

__all__ = [
    "ObstacleSpec",
    "StudyConfig",
    "StudyReport",
    "StudyError",
    "solve_perforated",
    "solve_effective",
    "corrector_field",
    "effective_energy",
    "run_study",
    "write_study_outputs",
]


class StudyError(RuntimeError):
    """A solve failed mid-study; carries the rows completed so far."""

    def __init__(self, message, partial_rows):
        super().__init__(message)
        self.partial_rows = partial_rows


@dataclass(frozen=True)
class ObstacleSpec:
    """Obstacle profile on the boundary: constant, concave bump, or table."""

    kind: str
    value: float = 0.0
    height: float = 1.0
    curvature: float = 8.0
    center: float | None = None
    xs: tuple = ()
    vals: tuple = ()

    @classmethod
    def constant(cls, value):
        return cls(kind="constant", value=float(value))

    @classmethod
    def bump(cls, height=1.0, curvature=8.0, center=None):
        return cls(kind="bump", height=height, curvature=curvature, center=center)

    @classmethod
    def tabulated(cls, xs, vals):
        return cls(kind="tabulated", xs=tuple(map(float, xs)), vals=tuple(map(float, vals)))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full(x.shape, self.value)
        if self.kind == "bump":
            c = 0.5 if self.center is None else self.center
            return np.maximum(0.0, self.height - self.curvature * (x - c) ** 2)
        return np.interp(x, self.xs, self.vals)

    def describe(self):
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        if self.kind == "bump":
            return {"kind": "bump", "height": self.height, "curvature": self.curvature,
                    "center": self.center}
        return {"kind": "tabulated", "xs": list(self.xs), "vals": list(self.vals)}


@dataclass
class StudyConfig:
    order: FractionalOrder
    constants: NormalizationConstants
    law: GammaLaw
    obstacle: ObstacleSpec
    eps_list: tuple = (0.25, 0.125, 0.0625)
    seeds: tuple = (0, 1, 2, 3)
    sigma: tuple = (0.0, 1.0)
    wall_value: float = 0.0
    slab_height: float = 0.5
    ny: int = 64
    grading: float | None = None
    nodes_per_radius: int = 8
    alpha0: float | None = None          # None: estimate from the cell problem
    cell_window: int = 8
    cell_seeds: tuple = (0, 1, 2, 3, 4, 5, 6, 7)
    theta: float = 0.01
    tol_alpha: float = 0.02
    tol: float = 1e-9
    max_sweeps: int = 200_000
    method: str = "active_set"
    threads: int = 1

    def __post_init__(self):
        eps = tuple(self.eps_list)
        if any(e2 >= e1 for e1, e2 in zip(eps, eps[1:])):
            raise ValueError("eps list must be strictly decreasing")
        if self.order.n != 1:
            raise ValueError("the sweep study is implemented for n = 1")


def _min_radius(config: StudyConfig, eps: float) -> float:
    inf_mass = config.law.essential_inf()
    if inf_mass <= 0.0 and config.law.kind == "bernoulli":
        inf_mass = config.law.gamma  # only positive draws produce balls
    if inf_mass <= 0.0:
        return 0.0
    factor = (inf_mass / config.constants.ball_cap_const) ** (1.0 / config.order.ext_exp)
    return factor * eps**config.order.crit_exp


def grid_for_eps(config: StudyConfig, eps: float) -> grids.ExtensionGrid:
    lo, hi = config.sigma
    r_min = _min_radius(config, eps)
    if r_min > 0.0:
        nx = int(np.ceil((hi - lo) / (r_min / config.nodes_per_radius)))
    else:
        nx = max(64, int(np.ceil(8.0 / eps)))
    return grids.build_grid(lo, hi, nx, config.slab_height, config.ny,
                            a=config.order.a, grading=config.grading)


def solve_perforated(config: StudyConfig, eps: float, seed: int):
    """Membrane pinned above the obstacle on one sampled perforation set."""
    g = grid_for_eps(config, eps)
    pset = sample(config.law, eps, config.sigma, config.order, config.constants, seed)
    mask, vals = rasterize(pset, g, obstacle=config.obstacle)
    p = solver.slab_problem(g, wall_value=config.wall_value)
    p.lower_mask[:] = mask
    p.lower_values[:] = vals
    sol = solver.solve(p, tol=config.tol, max_sweeps=config.max_sweeps, method=config.method)
    return g, pset, mask, sol


def solve_effective(config: StudyConfig, alpha0: float, grid=None):
    """Limit problem: one-sided quadratic boundary penalty of weight alpha0."""
    if alpha0 < 0.0:
        raise ValueError("alpha0 must be nonnegative")
    g = grid or grid_for_eps(config, min(config.eps_list))
    p = solver.slab_problem(g, wall_value=config.wall_value)
    p.quad_beta[:] = alpha0 * g.sigma_cell
    p.quad_ref[:] = config.obstacle(g.axes[0])
    sol = solver.solve(p, tol=config.tol, max_sweeps=config.max_sweeps, method=config.method)
    return g, sol


def effective_energy(config: StudyConfig, alpha0: float, g, sol) -> float:
    """J_alpha(u) = J(u) + 0.5 * alpha0 * int (u - phi)_-^2."""
    neg = np.maximum(config.obstacle(g.axes[0]) - sol.field.values[..., 0], 0.0)
    return sol.energy + 0.5 * float(np.sum(alpha0 * g.sigma_cell * neg * neg))


def corrector_field(config: StudyConfig, eps: float, seed: int, grid) -> np.ndarray:
    """Discrete corrector: equals one on the perforation nodes, zero on the
    wall, weighted-harmonic in between. Used by the competitor-energy check."""
    pset = sample(config.law, eps, config.sigma, config.order, config.constants, seed)
    mask, _ = rasterize(pset, grid)
    p = solver.slab_problem(grid, wall_value=0.0)
    p.dirichlet_mask[..., 0] |= mask
    p.dirichlet_values[..., 0][mask] = 1.0
    sol = solver.solve(p, tol=config.tol, method=config.method)
    return sol.field.values


@dataclass
class StudyReport:
    rows: list                 # dict per (eps, seed)
    eps_stats: list            # dict per eps with means / stderrs
    alpha0: float
    alpha0_source: str
    alpha0_bracket: tuple | None
    effective_energy: float
    provenance: dict


def run_study(config: StudyConfig) -> StudyReport:
    """Solve the sweep, the effective problem, and aggregate distances."""
    if config.alpha0 is None:
        est = cell.estimate_alpha0(
            config.law, config.order, config.constants,
            cell.CellGridParams(), T=config.cell_window, seeds=config.cell_seeds,
            theta=config.theta, tol_alpha=config.tol_alpha, threads=config.threads,
        )
        alpha0, bracket, source = est.alpha0, est.bracket, "estimated"
    else:
        alpha0, bracket, source = float(config.alpha0), None, "supplied"

    fine = grid_for_eps(config, min(config.eps_list))
    try:
        g_eff, sol_eff = solve_effective(config, alpha0, grid=fine)
    except solver.NonconvergenceError as err:
        raise StudyError(f"effective solve failed: {err}", []) from err
    j_eff = effective_energy(config, alpha0, g_eff, sol_eff)
    fx, fy = np.meshgrid(fine.axes[0], fine.y_nodes, indexing="ij")

    tasks = [(eps, seed) for eps in config.eps_list for seed in config.seeds]
    rows = []

    def one(task):
        eps, seed = task
        g, pset, mask, sol = solve_perforated(config, eps, seed)
        u_fine = g.interpolate(sol.field.values, fx, fy)
        diff = u_fine - sol_eff.field.values
        l2_bulk = grids.weighted_l2_norm(fine, diff)
        tr = diff[..., 0]
        l2_trace = float(np.sqrt(np.sum(fine.sigma_cell * tr * tr)))
        n_constrained = int(np.sum(mask))
        contact_frac = float(np.sum(sol.contact_mask) / n_constrained) if n_constrained else 0.0
        return {
            "eps": eps,
            "seed": seed,
            "energy_eps": sol.energy,
            "energy_eff": j_eff,
            "l2_bulk": l2_bulk,
            "l2_trace": l2_trace,
            "contact_frac": contact_frac,
        }

    try:
        if config.threads > 1:
            with ThreadPoolExecutor(max_workers=config.threads) as ex:
                rows = list(ex.map(one, tasks))
        else:
            for t in tasks:
                rows.append(one(t))
    except solver.NonconvergenceError as err:
        raise StudyError(f"solve failed during the sweep: {err}", rows) from err

    eps_stats = []
    for eps in config.eps_list:
        sel = [r for r in rows if r["eps"] == eps]
        tr = np.array([r["l2_trace"] for r in sel])
        gap = np.array([abs(r["energy_eps"] - j_eff) for r in sel])
        bulk = np.array([r["l2_bulk"] for r in sel])
        m = len(sel)
        eps_stats.append(
            {
                "eps": eps,
                "l2_trace_mean": float(tr.mean()),
                "l2_trace_stderr": float(tr.std(ddof=1) / np.sqrt(m)) if m > 1 else 0.0,
                "l2_bulk_mean": float(bulk.mean()),
                "energy_gap_mean": float(gap.mean()),
                "energy_gap_stderr": float(gap.std(ddof=1) / np.sqrt(m)) if m > 1 else 0.0,
            }
        )

    provenance = {
        "order": {"n": config.order.n, "s": config.order.s},
        "law": {"kind": config.law.kind, "mean": config.law.mean(),
                "gamma_bar": config.law.gamma_bar},
        "obstacle": config.obstacle.describe(),
        "eps_list": list(config.eps_list),
        "seeds": list(config.seeds),
        "grid": {"slab_height": config.slab_height, "ny": config.ny,
                 "nodes_per_radius": config.nodes_per_radius},
        "alpha0": alpha0,
        "alpha0_source": source,
        "alpha0_bracket": list(bracket) if bracket else None,
        "ball_cap_const": config.constants.ball_cap_const,
        "solver": {"tol": config.tol, "method": config.method},
    }
    return StudyReport(
        rows=rows,
        eps_stats=eps_stats,
        alpha0=alpha0,
        alpha0_source=source,
        alpha0_bracket=bracket,
        effective_energy=j_eff,
        provenance=provenance,
    )


STUDY_HEADER = ["eps", "seed", "energy_eps", "energy_eff", "l2_bulk", "l2_trace", "contact_frac"]


def write_study_outputs(report: StudyReport, outdir) -> None:
    import os

    rows = [
        [r["eps"], r["seed"], r["energy_eps"], r["energy_eff"], r["l2_bulk"],
         r["l2_trace"], r["contact_frac"]]
        for r in report.rows
    ]
    write_csv(os.path.join(outdir, "study.csv"), STUDY_HEADER, rows)
    eps = [s["eps"] for s in report.eps_stats]
    trace = [max(s["l2_trace_mean"], 1e-300) for s in report.eps_stats]
    gap = [max(s["energy_gap_mean"], 1e-300) for s in report.eps_stats]
    write_svg_loglog(
        os.path.join(outdir, "study.svg"),
        {"boundary trace distance": (eps, trace), "energy gap": (eps, gap)},
        xlabel="eps",
        ylabel="distance",
    )
    write_json(
        os.path.join(outdir, "study_report.json"),
        {"stats": report.eps_stats, "provenance": report.provenance,
         "effective_energy": report.effective_energy},
    )
