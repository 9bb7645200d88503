"""Constrained utility maximization by convex duality.

Closed-form dual solutions for power, log and a non-HARA utility, the maps
that turn them into primal strategies and wealth, and Monte Carlo checks of
the optimality conditions.
"""
from .market import MarketError, MarketModel, market_price_of_risk, validate_market
from .constraints import (
    Box,
    ConstraintError,
    ConstraintSet,
    FullSpace,
    Orthant,
    Polyhedron,
    PolyhedralCone,
    barrier_cone_member,
    in_normal_cone,
    project,
    project_barrier_cone,
    support_function,
)
from .utility import LogUtility, NonHARAUtility, PowerUtility, check_assumption_3_1, evaluate
from .paths import PathBundle, generate_paths, simulate_dual, simulate_wealth
from .solvers import (
    DualSolution,
    SolverError,
    outer_y_optimize,
    pointwise_dual_minimizer,
    solve,
    solve_log,
    solve_nonhara,
    solve_power,
)
from .verify import (
    McEstimate,
    VerificationReport,
    adjoint_oracle_p2,
    check_fbsde_residuals,
    estimate_dual_value,
    estimate_primal_value,
    weak_duality_check,
)

__version__ = "0.1.0"
