"""Obstacle problems for the fractional Laplacian over perforated boundaries.

The nonlocal operator is handled through its local extension: a degenerate
elliptic equation div(y^a grad u) = 0 on a slab above the boundary plane,
with the operator realized as the weighted normal trace at y = 0.  The
package solves the constrained (Signorini-type) boundary problems that arise
when the obstacle acts only on a random lattice of tiny sets, estimates the
effective boundary coefficient alpha0 from cell problems, and verifies the
convergence of the perforated solutions to the effective nonlinear-Robin
limit.
"""

from .numerics import (
    FractionalOrder,
    NormalizationConstants,
    constants_for,
    fundamental_h,
    barrier_profile,
    mu_constant,
    normalization_nu,
    gamma_function,
)
from .grids import ExtensionGrid, Field, build_grid, energy, weighted_l2_norm, boundary_flux
from .solver import (
    VIProblem,
    ComplementaritySolution,
    NonconvergenceError,
    ProblemConfigError,
    slab_problem,
    solve,
    residual_report,
)
from .perforations import GammaLaw, PerforationSet, sample, rasterize
from .capacity import BoundarySet, CapacityEstimate, estimate_capacity, far_field_check, calibrated_constants
from .cell import CellGridParams, CellRun, AlphaEstimate, solve_cell, estimate_ell, estimate_alpha0, flux_balance_alpha
from .homogenize import ObstacleSpec, StudyConfig, StudyReport, run_study, solve_perforated, solve_effective

__version__ = "0.1.0"
