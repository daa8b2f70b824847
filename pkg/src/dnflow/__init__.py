"""Solvers and diagnostics for doubly nonlinear parabolic systems
D(psi)(v_t) = div DF(Dv) on finite-difference grids, plus a flow-based
computer of p-ground states and the optimal p-Rayleigh quotient."""

from .errors import (
    BadOrder,
    ConfigError,
    DegenerateFit,
    DnflowError,
    ModelMismatch,
    NonConvergence,
    NotScalar,
    OutOfDomain,
    OutOfRange,
    SingularPoint,
    UnknownDatum,
    ZeroCollapse,
    ZeroField,
)
from .grids import (
    CellGradient,
    Grid,
    VectorField,
    divergence_adjoint,
    gradient,
    load_snapshot,
    lp_norm,
    rayleigh_quotient,
    save_snapshot,
    w1p_seminorm,
)
from .models import (
    F_eval,
    F_grad,
    PPower,
    PPowerNorm,
    Quadratic,
    QuadraticFrobenius,
    check_growth_coercivity,
    dissipation_potential,
    psi_eval,
    psi_grad,
    psi_legendre,
)
from .scheme import (
    StepConfig,
    StepStats,
    Trajectory,
    energy,
    evolve,
    interpolants,
    step,
    weak_residual,
)
from .diagnostics import (
    RegularityReport,
    SeriesReport,
    dissipation_series,
    energy_convexity_check,
    energy_series,
    excess,
    max_principle_check,
    regularity_norms,
    scaled_energy_report,
)
from .groundstate import (
    DecayFitReport,
    FlowConfig,
    GroundStateReport,
    LambdaBoundsReport,
    decay_rate_fit,
    direct_rayleigh_minimize,
    el_residual,
    ground_state_via_flow,
    lambda_bounds_check,
    rayleigh_series,
)
from .refinement import (
    ComparisonReport,
    RefinementReport,
    comparison_check,
    refinement_study,
)
from .cli import ExperimentConfig, builtin_initial, parse_config, run

__version__ = "0.1.0"
