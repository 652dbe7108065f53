import numpy as np
import pytest

from fracperf import capacity as cp
from fracperf import grids, homogenize as hg
from fracperf import numerics as nm
from fracperf import perforations as pf
from fracperf import solver

ORDER = nm.FractionalOrder(1, 0.25)
CONSTS = cp.calibrated_constants(ORDER, nodes_per_diameter=16)


def make_config(**kw):
    base = dict(
        order=ORDER,
        constants=CONSTS,
        law=pf.GammaLaw.constant(CONSTS.ball_cap_const),
        obstacle=hg.ObstacleSpec.bump(),
        eps_list=(0.25, 0.125),
        seeds=(0, 1),
        nodes_per_radius=6,
        ny=48,
        alpha0=0.57,
    )
    base.update(kw)
    return hg.StudyConfig(**base)


def test_obstacle_spec_shapes():
    bump = hg.ObstacleSpec.bump()
    x = np.linspace(0, 1, 11)
    v = bump(x)
    assert v.max() == pytest.approx(1.0) and v[0] == 0.0 and v[-1] == 0.0
    const = hg.ObstacleSpec.constant(0.3)
    assert np.all(const(x) == 0.3)
    tab = hg.ObstacleSpec.tabulated([0.0, 0.5, 1.0], [0.0, 1.0, 0.0])
    assert tab(0.25) == pytest.approx(0.5)


def test_eps_list_must_decrease():
    with pytest.raises(ValueError):
        make_config(eps_list=(0.125, 0.25))


def test_zero_law_matches_unconstrained():
    cfg = make_config(law=pf.GammaLaw.constant(0.0), alpha0=0.0)
    g, pset, mask, sol = hg.solve_perforated(cfg, 0.25, seed=0)
    assert not mask.any()
    assert np.all(sol.field.values == 0.0)


def test_obstacle_below_free_solution_inactive():
    cfg = make_config(obstacle=hg.ObstacleSpec.constant(-1.0))
    g, pset, mask, sol = hg.solve_perforated(cfg, 0.25, seed=0)
    assert mask.any()
    # free solution with zero wall data is zero; constraints at -1 never bind
    assert np.abs(sol.field.values).max() < 1e-12


def test_refinement_self_oracle():
    cfg_fine = make_config(nodes_per_radius=8)
    cfg_coarse = make_config(nodes_per_radius=4)
    _, _, _, fine = hg.solve_perforated(cfg_fine, 0.125, seed=0)
    _, _, _, coarse = hg.solve_perforated(cfg_coarse, 0.125, seed=0)
    assert fine.field.values[..., 0].min() >= -1e-12
    assert abs(fine.energy - coarse.energy) / fine.energy < 0.10


def test_nonzero_wall_data():
    # compatible wall data with an obstacle below it: the constant field is
    # the unconstrained minimizer and the perforations never bind
    cfg = make_config(wall_value=0.3, obstacle=hg.ObstacleSpec.constant(0.1))
    g, pset, mask, sol = hg.solve_perforated(cfg, 0.25, seed=0)
    assert np.abs(sol.field.values - 0.3).max() < 1e-10


def test_effective_alpha_zero_unconstrained():
    cfg = make_config()
    g, sol = hg.solve_effective(cfg, 0.0)
    assert np.all(sol.field.values == 0.0)
    with pytest.raises(ValueError):
        hg.solve_effective(cfg, -0.5)


def test_effective_penalty_vanishes_below_obstacle():
    cfg = make_config(obstacle=hg.ObstacleSpec.constant(-0.5))
    g, sol = hg.solve_effective(cfg, 0.57)
    assert np.abs(sol.field.values).max() < 1e-12
    assert hg.effective_energy(cfg, 0.57, g, sol) == pytest.approx(0.0, abs=1e-12)


def test_single_free_node_closed_form():
    # clamp everything except one boundary node; the penalty update has the
    # scalar closed form (S + beta*phi) / (d + beta) below the reference
    g = grids.build_grid(0.0, 1.0, 2, 0.5, 2, a=ORDER.a)
    p = solver.slab_problem(g, wall_value=0.4)
    p.dirichlet_mask[:] = True
    p.dirichlet_values[:] = 0.4
    free = (1, 0)
    p.dirichlet_mask[free] = False
    phi, beta = 0.9, 2.0
    p.quad_beta[1] = beta
    p.quad_ref[1] = phi
    sol = solver.solve(p, tol=1e-13)
    d = solver._diagonal(g)[free]
    S = solver._neighbor_sum(g, sol.field.values)[free]
    t1 = S / d
    expect = t1 if t1 >= phi else (S + beta * phi) / (d + beta)
    assert sol.field.values[free] == pytest.approx(expect, abs=1e-12)
    assert sol.field.values[free] < phi  # penalty really active in this setup


def test_effective_independent_of_seeds():
    cfg_a = make_config(seeds=(0, 1))
    cfg_b = make_config(seeds=(5, 6))
    ra = hg.run_study(cfg_a)
    rb = hg.run_study(cfg_b)
    assert ra.effective_energy == rb.effective_energy
    # constant law: the perforated rows agree as well
    assert ra.rows[0]["l2_trace"] == rb.rows[0]["l2_trace"]


def test_monotone_alpha0_dependence():
    cfg = make_config()
    g1, s1 = hg.solve_effective(cfg, 0.2)
    g2, s2 = hg.solve_effective(cfg, 0.4)
    phi = cfg.obstacle(g1.axes[0])
    below = s1.field.values[..., 0] < phi
    assert np.any(below)
    assert np.all(s2.field.values[below, 0] >= s1.field.values[below, 0] - 1e-10)
    pen1 = hg.effective_energy(cfg, 0.2, g1, s1) - s1.energy
    pen2 = hg.effective_energy(cfg, 0.4, g2, s2) - s2.energy
    assert pen2 > pen1 > 0.0


def test_effective_robin_trace():
    # the minimizer's natural boundary condition: the weighted trace equals
    # -alpha0 * (u - phi)_- (negative flux where the field hangs below the
    # obstacle, matching the sign of the constrained problem's multiplier)
    cfg = make_config(ny=96)
    g = grids.build_grid(0.0, 1.0, 1024, 0.5, 96, a=ORDER.a)
    _, sol = hg.solve_effective(cfg, 0.57, grid=g)
    phi = cfg.obstacle(g.axes[0])
    flux = grids.boundary_flux(g, sol.field.values)
    robin = -0.57 * np.maximum(phi - sol.field.values[..., 0], 0.0)
    inner = slice(8, -8)
    assert np.abs(flux[inner] - robin[inner]).max() < 5e-3
    assert np.abs(robin).max() > 0.1  # the condition is active, not vacuous


def test_perforated_contact_flux_sign():
    cfg = make_config()
    _, _, _, sol = hg.solve_perforated(cfg, 0.25, seed=0)
    assert sol.contact_mask.any()
    flux = grids.boundary_flux(sol.field.grid, sol.field.values)
    assert flux[sol.contact_mask].max() <= 1e-10


def test_competitor_energy_dominates():
    # u_eps minimizes over the constraint set; the corrector competitor
    # u_bar + (u_bar - phi)_- * w is feasible, so its energy dominates
    cfg = make_config()
    eps, seed = 0.25, 0
    g, pset, mask, sol = hg.solve_perforated(cfg, eps, seed)
    _, eff = hg.solve_effective(cfg, cfg.alpha0, grid=g)
    w = hg.corrector_field(cfg, eps, seed, g)
    phi = cfg.obstacle(g.axes[0])[:, None]
    competitor = eff.field.values + np.maximum(phi - eff.field.values, 0.0) * w
    assert np.all(competitor[mask, 0] >= cfg.obstacle(g.axes[0])[mask] - 1e-10)
    assert sol.energy <= grids.energy(g, competitor) + 1e-12


def test_bernoulli_law_mixed_radii():
    law = pf.GammaLaw.bernoulli(0.5, CONSTS.ball_cap_const)
    cfg = make_config(law=law, seeds=(2,), eps_list=(0.25,))
    g, pset, mask, sol = hg.solve_perforated(cfg, 0.25, seed=2)
    assert np.any(pset.radii == 0.0) and np.any(pset.radii > 0.0)
    assert mask.any()
    assert sol.kkt_residual < cfg.tol


def test_trend_decreasing_light():
    cfg = make_config(alpha0=None, cell_seeds=(0, 1), eps_list=(0.25, 0.125), seeds=(0, 1))
    rep = hg.run_study(cfg)
    assert rep.alpha0_source == "estimated"
    tr = [s["l2_trace_mean"] for s in rep.eps_stats]
    gap = [s["energy_gap_mean"] for s in rep.eps_stats]
    assert tr[1] < tr[0]
    assert gap[1] < gap[0]


def test_study_error_partial_dump():
    cfg = make_config(method="psor", max_sweeps=3, tol=1e-12)
    with pytest.raises(hg.StudyError) as err:
        hg.run_study(cfg)
    assert isinstance(err.value.partial_rows, list)


def test_study_outputs(tmp_path):
    cfg = make_config()
    rep = hg.run_study(cfg)
    hg.write_study_outputs(rep, tmp_path)
    csv = (tmp_path / "study.csv").read_text().splitlines()
    assert csv[0] == "eps,seed,energy_eps,energy_eff,l2_bulk,l2_trace,contact_frac"
    assert len(csv) == 1 + len(cfg.eps_list) * len(cfg.seeds)
    svg = (tmp_path / "study.svg").read_text()
    assert svg.count("<polyline") == 2
