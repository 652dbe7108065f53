import numpy as np
import pytest
from scipy import integrate

from fracperf import grids
from fracperf import numerics as nm


def kernel_field(grid, order, constants, x_center):
    """Sample the fundamental solution on a grid, boundary row cell-averaged.

    Point values of the |x|^(-beta) trace are not summable near the pole (and
    undefined at it), so the y = 0 row takes exact cell averages of the trace
    while the rows above are sampled pointwise.
    """
    b = order.ext_exp
    X = grid.axes[0][:, None] - x_center
    u = np.empty(grid.shape)
    u[:, 1:] = constants.nu * (X**2 + grid.y_nodes[None, 1:] ** 2) ** (-0.5 * b)
    dx = grid.dx[0]
    lo = grid.axes[0] - 0.5 * dx - x_center
    hi = grid.axes[0] + 0.5 * dx - x_center
    anti = lambda t: np.sign(t) * np.abs(t) ** (1.0 - b) / (1.0 - b)
    u[:, 0] = constants.nu * (anti(hi) - anti(lo)) / dx
    return u


def test_grading_formula():
    g = grids.build_grid(0.0, 1.0, 4, 1.0, 4, a=0.0, grading=2.0)
    np.testing.assert_allclose(g.y_nodes, [0.0, 1 / 16, 1 / 4, 9 / 16, 1.0], atol=1e-15)
    assert g.y_nodes[0] == 0.0 and g.y_nodes[-1] == g.slab_height
    assert np.all(np.diff(g.y_nodes) > 0)


def test_unweighted_uniform_reduces_to_five_point():
    g = grids.build_grid(0.0, 1.0, 8, 1.0, 8, a=0.0, grading=1.0)
    # interior weights of the standard 5-point Laplacian are all one
    assert g.w_x[0][3, 4] == pytest.approx(1.0, rel=1e-14)
    assert g.w_y[4, 3] == pytest.approx(1.0, rel=1e-14)
    # wall rows carry half cells
    assert g.w_y[0, 3] == pytest.approx(0.5, rel=1e-14)


def test_first_cell_average():
    for a in (-0.5, 0.2, 0.5):
        g = grids.build_grid(0.0, 1.0, 4, 1.0, 8, a=a, grading=1.0)
        dy = g.y_nodes[1]
        assert grids.cell_average_weight(0.0, dy, a) == pytest.approx(
            dy**a / (1.0 + a), rel=1e-13
        )


def test_positive_finite_weights():
    for a in (-0.6, 0.0, 0.5):
        g = grids.build_grid(0.0, 1.0, 6, 0.5, 10, a=a)
        for _, w, _ in g.edge_weight_arrays():
            assert np.all(np.isfinite(w)) and np.all(w > 0)


def test_config_errors():
    with pytest.raises(grids.GridConfigError):
        grids.build_grid(0.0, 0.0, 4, 1.0, 4, a=0.0)
    with pytest.raises(grids.GridConfigError):
        grids.build_grid(0.0, 1.0, 1, 1.0, 4, a=0.0)
    with pytest.raises(grids.GridConfigError):
        grids.build_grid(0.0, 1.0, 4, -1.0, 4, a=0.0)


def test_energy_constant_and_linear():
    g = grids.build_grid(0.0, 1.0, 8, 1.0, 8, a=0.0, grading=1.0)
    assert grids.energy(g, np.full(g.shape, 2.3)) == 0.0
    u = np.broadcast_to(g.y_nodes, g.shape).copy()
    assert grids.energy(g, u) == pytest.approx(0.5, rel=1e-12)


def test_energy_zero_iff_constant():
    g = grids.build_grid(0.0, 1.0, 6, 0.5, 6, a=0.3)
    rng = np.random.default_rng(1)
    u = rng.standard_normal(g.shape)
    assert grids.energy(g, u) > 0.0
    assert grids.energy(g, np.zeros(g.shape)) == 0.0


def test_energy_of_kernel_against_quadrature_oracle():
    # field smooth on the slab: kernel centred outside the box
    o = nm.FractionalOrder(1, 0.25)
    c = nm.constants_for(o)
    x_lo, x_hi, Y = 0.5, 2.5, 0.75
    b = o.ext_exp

    def grad_sq(x, y):
        r2 = x * x + y * y
        return (c.nu * b) ** 2 * r2 ** (-b - 1.0)

    oracle, _ = integrate.dblquad(
        lambda y, x: y**o.a * grad_sq(x, y), x_lo, x_hi, 0.0, Y, epsabs=1e-12
    )
    oracle *= 0.5

    vals = []
    for nx, ny in [(64, 32), (128, 64), (256, 128)]:
        g = grids.build_grid(x_lo, x_hi, nx, Y, ny, a=o.a)
        X = g.axes[0][:, None]
        u = c.nu * (X**2 + g.y_nodes[None, :] ** 2) ** (-0.5 * b)
        vals.append(grids.energy(g, u))
    assert abs(vals[-1] - oracle) / oracle < 0.02
    # refinement moves the discrete energy toward the oracle (1% noise slack)
    errs = [abs(v - oracle) for v in vals]
    assert errs[1] <= errs[0] * 1.01 and errs[2] <= errs[1] * 1.01


def test_weighted_l2_examples():
    g = grids.build_grid(0.0, 1.0, 8, 1.0, 12, a=0.5)
    assert grids.weighted_l2_norm(g, np.zeros(g.shape)) == 0.0
    one = np.ones(g.shape)
    exact = 1.0 * g.slab_height ** (1.5) / 1.5
    assert grids.weighted_l2_norm(g, one) ** 2 == pytest.approx(exact, abs=1e-10)
    rng = np.random.default_rng(2)
    u = rng.standard_normal(g.shape)
    assert grids.weighted_l2_norm(g, 2.0 * u) ** 2 == pytest.approx(
        4.0 * grids.weighted_l2_norm(g, u) ** 2, rel=1e-12
    )


def test_boundary_flux_constant_zero():
    g = grids.build_grid(0.0, 1.0, 8, 0.5, 8, a=0.5)
    assert np.all(grids.boundary_flux(g, np.full(g.shape, 1.7)) == 0.0)


def test_boundary_flux_weighted_profile():
    # u = y^(1-a)/(1-a) solves (y^a u')' = 0 with unit flux
    for s in (0.25, 0.4):
        o = nm.FractionalOrder(1, s)
        g = grids.build_grid(0.0, 1.0, 16, 0.5, 24, a=o.a)
        u = np.broadcast_to(g.y_nodes ** (1.0 - o.a) / (1.0 - o.a), g.shape).copy()
        flux = grids.boundary_flux(g, u)
        assert np.abs(flux - 1.0).max() < 1e-3


def test_boundary_flux_of_kernel_recovers_unit_mass():
    # kernel centred on a boundary node, 512 x 256 grid; the first y cell
    # must not be finer than dx, so the y mesh is kept uniform here
    for s in (0.25, 0.4):
        o = nm.FractionalOrder(1, s)
        c = nm.constants_for(o)
        g = grids.build_grid(-2.0, 2.0, 512, 4.0, 256, a=o.a, grading=1.0)
        u = kernel_field(g, o, c, x_center=float(g.axes[0][256]))
        total = float(np.sum(grids.boundary_flux(g, u) * g.sigma_cell))
        assert abs(total - (-1.0)) < 0.05


def test_summation_by_parts_random_fields():
    rng = np.random.default_rng(3)
    for a in (-0.4, 0.5):
        g = grids.build_grid(0.0, 1.0, 10, 0.5, 8, a=a)
        u = rng.standard_normal(g.shape)
        v = rng.standard_normal(g.shape)
        u[g.gamma_mask] = 0.0
        v[g.gamma_mask] = 0.0
        lhs = grids.bilinear_energy(g, u, v)
        L = grids.apply_operator(g, u)
        assert abs(lhs + float(np.sum(v * L))) < 1e-12 * max(1.0, abs(lhs))
        # the vertical part of L on Sigma is exactly cell * flux
        vert = g.w_y[..., 0] * (u[..., 1] - u[..., 0])
        np.testing.assert_allclose(
            vert, g.sigma_cell * grids.boundary_flux(g, u), atol=1e-14
        )


def test_n2_smoke():
    g = grids.build_grid((0, 0), (1, 1), (6, 5), 0.5, 6, a=0.5)
    one = np.ones(g.shape)
    exact = 1.0 * 0.5**1.5 / 1.5
    assert grids.weighted_l2_norm(g, one) ** 2 == pytest.approx(exact, abs=1e-12)
    rng = np.random.default_rng(4)
    u = rng.standard_normal(g.shape)
    v = rng.standard_normal(g.shape)
    u[g.gamma_mask] = 0.0
    v[g.gamma_mask] = 0.0
    lhs = grids.bilinear_energy(g, u, v)
    assert abs(lhs + float(np.sum(v * grids.apply_operator(g, u)))) < 1e-12


def test_field_csv_roundtrip(tmp_path):
    g = grids.build_grid(0.0, 1.0, 5, 0.5, 4, a=0.2)
    rng = np.random.default_rng(5)
    f = grids.Field(g, rng.standard_normal(g.shape))
    path = tmp_path / "field.csv"
    grids.export_field(f, path)
    back = grids.import_field(g, path)
    np.testing.assert_array_equal(back.values, f.values)
    header = path.read_text().splitlines()[0]
    assert header == "i,j,x,y,value"


def test_field_csv_roundtrip_n2(tmp_path):
    g = grids.build_grid((0, 0), (1, 1), (3, 4), 0.5, 3, a=0.5)
    rng = np.random.default_rng(6)
    f = grids.Field(g, rng.standard_normal(g.shape))
    path = tmp_path / "field2.csv"
    grids.export_field(f, path)
    back = grids.import_field(g, path)
    np.testing.assert_array_equal(back.values, f.values)


def test_field_validation():
    g = grids.build_grid(0.0, 1.0, 4, 0.5, 4, a=0.0)
    with pytest.raises(ValueError):
        grids.Field(g, np.zeros((2, 2)))
    bad = np.zeros(g.shape)
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        grids.Field(g, bad)
