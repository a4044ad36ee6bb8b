"""Monte Carlo solvers and applicability checks for anticipated BSDEs.

The pieces compose in layers: problem descriptions (problem, catalog,
genexpr), path simulation and regression (paths, condexp), solvers
(solver_lipschitz, solver_quadratic), and the certification side
(constants, diagnostics, validation).  The cli module front-ends all of it.
"""

from .catalog import (
    PROBLEMS,
    builtin_problem,
    compile_generator,
    compile_lambda,
    reference_y0,
    terminal_from_callable,
    terminal_from_expr,
)
from .condexp import BasisSpec
from .constants import (
    applicability_report,
    barrier_constants,
    local_window_constants,
    small_terminal_constants,
)
from .diagnostics import (
    apriori_bound_check,
    ball_membership,
    contraction_report,
    estimate_terminal_norms,
    z2_norm_estimate,
)
from .paths import PathEnsemble, coarsen_ensemble, simulate_brownian
from .problem import DelaySpec, ProblemSpec, StructuralConstants, TimeGrid
from .solver_lipschitz import (
    DiscreteSolution,
    NumericsSpec,
    solve_anticipated_lipschitz,
)
from .solver_quadratic import (
    STRATEGIES,
    QuadraticSolveResult,
    build_phi_transform,
    choose_strategy,
    solve,
    solve_global_stitch,
    solve_local_contraction,
    solve_picard_small,
    solve_transform,
)

__version__ = "0.1.0"

__all__ = [
    "PROBLEMS",
    "PathEnsemble",
    "BasisSpec",
    "DelaySpec",
    "DiscreteSolution",
    "NumericsSpec",
    "ProblemSpec",
    "QuadraticSolveResult",
    "STRATEGIES",
    "StructuralConstants",
    "TimeGrid",
    "applicability_report",
    "apriori_bound_check",
    "ball_membership",
    "barrier_constants",
    "builtin_problem",
    "build_phi_transform",
    "choose_strategy",
    "coarsen_ensemble",
    "compile_generator",
    "compile_lambda",
    "contraction_report",
    "estimate_terminal_norms",
    "local_window_constants",
    "reference_y0",
    "simulate_brownian",
    "small_terminal_constants",
    "solve",
    "solve_anticipated_lipschitz",
    "solve_global_stitch",
    "solve_local_contraction",
    "solve_picard_small",
    "solve_transform",
    "terminal_from_callable",
    "terminal_from_expr",
    "z2_norm_estimate",
    "__version__",
]
