"""Hybrid finite difference solver for det D^2 u = f on the unit square.

The discretization combines a wide-stencil monotone scheme on a "singular"
region (where the solution may lack C^2 regularity) with a divergence-form
standard finite difference scheme on the complementary "regular" region,
and solves the coupled nonlinear system with a damped, Poisson-preconditioned
fixed-point iteration.
"""

import os as _os

# Honor the thread cap before numpy is imported anywhere in this package, so
# the usual BLAS/OpenMP pools pick it up.  Has no effect if numpy was already
# imported by the host process.
_cap = _os.environ.get("MA_HYBRID_THREADS")
if _cap:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        _os.environ.setdefault(_var, _cap)

from .grid import GridSpec, restrict, max_norm, l2_inner, l2_norm, h1_inner, h1_seminorm
from .diffops import (
    SolverFailure,
    discrete_hessian,
    det_divergence_form,
    det_divergence_form_nodes,
    laplacian,
    poisson_solve,
    poincare_constant,
)
from .monotone import (
    DirectionSet,
    StencilAtNode,
    stencil_at,
    second_difference,
    min_second_difference,
    det_wide_stencil,
    det_wide_stencil_pos,
    monotonicity_probe,
    lipschitz_probe,
)
from .hybrid import (
    MaskHeuristics,
    RegionMask,
    build_mask,
    mask_from_regular,
    all_regular_mask,
    all_singular_mask,
    hybrid_residual,
    is_discrete_convex,
    hybrid_norm,
    precondition,
    save_mask,
    load_mask,
)
from .problems import Problem, catalog, errors_vs_exact, verify_problem
from .solver import SolverConfig, SolveReport, initial_guess, solve, residuals, estimate_steps

__version__ = "0.1.0"
