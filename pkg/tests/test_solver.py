import itertools

import numpy as np
import pytest

from fracperf import grids, solver


def brute_force_solve(problem):
    """Enumerate every active set of constrained nodes; exact reference.

    Solves each equality-constrained quadratic with a dense factorization and
    returns the feasible candidate of least objective.  Only valid for beta=0
    problems (the enumeration is over bound activity patterns).
    """
    g = problem.grid
    K = solver._flat_system(problem).toarray()
    N = K.shape[0]
    C, G, B, R, lb, bound = solver._expand(problem)
    assert not np.any(B > 0)
    b = (G - C).ravel()
    dir_mask = problem.dirichlet_mask.ravel()
    dir_vals = problem.dirichlet_values.ravel()
    free = ~dir_mask
    bound_flat = bound.ravel() & free
    lb_flat = lb.ravel()
    cons = np.flatnonzero(bound_flat)

    best_obj, best_u = np.inf, None
    for pattern in itertools.product([False, True], repeat=cons.size):
        fixed = dir_mask.copy()
        x = np.where(dir_mask, dir_vals, 0.0)
        for node, on in zip(cons, pattern):
            if on:
                fixed[node] = True
                x[node] = lb_flat[node]
        solv = np.flatnonzero(~fixed)
        if solv.size:
            A = K[np.ix_(solv, solv)]
            rhs = b[solv] - K[np.ix_(solv, np.flatnonzero(fixed))] @ x[np.flatnonzero(fixed)]
            x[solv] = np.linalg.solve(A, rhs)
        # feasibility of inactive constrained nodes
        if np.any(x[cons] < lb_flat[cons] - 1e-11):
            continue
        u = x.reshape(g.shape)
        obj = solver._objective(g, u, C, G, B, R)
        if obj < best_obj - 1e-14:
            best_obj, best_u = obj, u
    return best_u


def random_instance(seed):
    rng = np.random.default_rng(seed)
    nx = int(rng.integers(2, 6))
    a = float(rng.choice([-0.4, 0.0, 0.5]))
    g = grids.build_grid(0.0, 1.0, nx, float(rng.uniform(0.3, 1.0)), 2, a=a)
    wall = float(rng.uniform(-0.5, 1.0))
    p = solver.slab_problem(g, wall_value=wall)
    ncons = int(rng.integers(0, nx + 2))
    idx = rng.choice(nx + 1, size=min(ncons, nx + 1), replace=False)
    p.lower_mask[idx] = True
    p.lower_values[idx] = rng.uniform(-0.5, 0.8, size=idx.size)
    if rng.random() < 0.7:
        p.linear[:] = rng.uniform(-1.0, 1.0) * g.sigma_cell
    if rng.random() < 0.7:
        k = int(rng.integers(0, nx + 1))
        p.sinks[k] += float(rng.uniform(0.0, 1.5))
    return p


def test_trivial_unconstrained_zero():
    g = grids.build_grid(0, 1, 8, 0.5, 8, a=0.5)
    sol = solver.solve(solver.slab_problem(g), tol=1e-12)
    assert sol.iterations == 1
    assert np.all(sol.field.values == 0.0)


def test_constant_feasible_minimizer():
    g = grids.build_grid(0, 1, 8, 0.5, 6, a=0.2)
    p = solver.slab_problem(g, wall_value=0.7)
    p.lower_mask[:] = True
    p.lower_values[:] = 0.7
    sol = solver.solve(p, tol=1e-12)
    assert np.abs(sol.field.values - 0.7).max() < 1e-10
    # u == phi everywhere on the bound set: complementary set on {u > phi} empty
    assert sol.contact_mask.all()


def test_oracle_equivalence_hundred_instances():
    for seed in range(100):
        p = random_instance(seed)
        ref = brute_force_solve(p)
        sol = solver.solve(p, tol=1e-11, max_sweeps=200_000)
        assert np.abs(sol.field.values - ref).max() < 1e-8, f"seed {seed}"


def test_active_set_matches_psor():
    for seed in (3, 17, 42):
        p = random_instance(seed)
        s1 = solver.solve(p, tol=1e-11)
        p2 = random_instance(seed)
        s2 = solver.solve(p2, tol=1e-11, method="active_set")
        assert np.abs(s1.field.values - s2.field.values).max() < 1e-8


def test_lexicographic_matches_redblack():
    p = random_instance(5)
    s1 = solver.solve(p, tol=1e-11, ordering="redblack")
    p = random_instance(5)
    s2 = solver.solve(p, tol=1e-11, ordering="lexicographic")
    assert np.abs(s1.field.values - s2.field.values).max() < 1e-8


def test_uniqueness_from_different_starts():
    tol = 1e-10
    p = random_instance(11)
    s1 = solver.solve(p, tol=tol, initial=None)
    rng = np.random.default_rng(0)
    warm = rng.uniform(-1.0, 1.0, size=p.grid.shape)
    s2 = solver.solve(p, tol=tol, initial=warm)
    assert np.abs(s1.field.values - s2.field.values).max() < 10 * tol


def test_energy_monotone_with_omega_one():
    p = random_instance(23)
    sol = solver.solve(p, tol=1e-10, relaxation=1.0, debug=True)
    h = np.array(sol.objective_history)
    assert np.all(np.diff(h) <= 1e-13 * np.maximum(1.0, np.abs(h[:-1])))


def test_comparison_principle_enlarged_constraints():
    for seed in range(12):
        p = random_instance(seed)
        base = solver.solve(p, tol=1e-11).field.values
        q = random_instance(seed)
        freeb = np.flatnonzero(~q.lower_mask)
        if freeb.size == 0:
            continue
        rng = np.random.default_rng(seed + 1000)
        node = int(rng.choice(freeb))
        q.lower_mask[node] = True
        q.lower_values[node] = float(base[node, 0] + rng.uniform(0.0, 0.5))
        bigger = solver.solve(q, tol=1e-11).field.values
        assert np.all(bigger >= base - 1e-9)


def test_feasibility_invariant():
    for seed in (0, 1, 2):
        p = random_instance(seed)
        sol = solver.solve(p, tol=1e-10)
        slack = sol.field.values[..., 0] - p.lower_values
        assert np.all(slack[p.lower_mask] >= -1e-12)
        assert sol.kkt_residual < 1e-10


def test_sink_balance_identity():
    # unconstrained field with one point sink: the net cell outflow at the
    # sink node equals the injected strength (discrete divergence theorem)
    g = grids.build_grid(0, 1, 16, 0.5, 12, a=0.5)
    p = solver.slab_problem(g)
    i = solver.add_point_sink(p, 0.5, 1.0)
    sol = solver.solve(p, tol=1e-12, method="active_set")
    L = grids.apply_operator(g, sol.field.values)
    assert abs(-L[i, 0] - 1.0) < 1e-8
    # and the total Dirichlet-wall outflow matches the injection
    total = float(np.sum(L[g.gamma_mask]))
    assert abs(total - 1.0) < 1e-8


def test_sinks_accumulate_on_shared_node():
    g = grids.build_grid(0, 1, 4, 0.5, 4, a=0.0)
    p = solver.slab_problem(g)
    solver.add_point_sink(p, 0.24, 1.0)
    solver.add_point_sink(p, 0.26, 0.5)
    assert p.sinks[np.argmax(p.sinks)] == pytest.approx(1.5)


def test_residual_report_clean_and_perturbed():
    p = random_instance(31)
    sol = solver.solve(p, tol=1e-11)
    rep = solver.residual_report(p, sol.field.values, tol=1e-8)
    assert rep.clean
    # push one constrained node below its bound: exactly that node flagged
    cons = np.flatnonzero(p.lower_mask)
    if cons.size == 0:
        p.lower_mask[0] = True
        p.lower_values[0] = float(sol.field.values[0, 0])
        cons = np.array([0])
    u = sol.field.values.copy()
    node = int(cons[0])
    u[node, 0] = p.lower_values[node] - 0.1
    rep = solver.residual_report(p, u, tol=1e-8)
    flagged = np.flatnonzero(rep.feasibility_flags[..., 0])
    assert flagged.tolist() == [node]


def test_infeasible_dirichlet_bound_conflict():
    g = grids.build_grid(0, 1, 4, 0.5, 4, a=0.0)
    p = solver.slab_problem(g)
    p.dirichlet_mask[..., 0] = True  # clamp the whole boundary row
    p.dirichlet_values[..., 0] = 0.0
    with pytest.raises(solver.ProblemConfigError):
        solver.VIProblem(
            grid=g,
            dirichlet_mask=p.dirichlet_mask,
            dirichlet_values=p.dirichlet_values,
            lower_mask=np.ones(g.shape[:-1], dtype=bool),
            lower_values=np.full(g.shape[:-1], 0.5),
        )


def test_nonconvergence_carries_residual():
    p = random_instance(2)
    with pytest.raises(solver.NonconvergenceError) as err:
        solver.solve(p, tol=1e-13, max_sweeps=2)
    assert err.value.residual > 0.0
