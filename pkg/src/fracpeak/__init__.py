"""Numerical toolkit for boundary-concentrating peaks of a fractional
Schrodinger-Poisson system on an interval."""

__version__ = "0.1.0"

from .gridcore import (  # noqa: F401
    ConfigError,
    Field,
    Grid,
    ModelParams,
    NumericalError,
    eps_inner,
    integrate,
    make_grid,
)
from .fracops import (  # noqa: F401
    LineMultiplierPlan,
    NonlocalMatrix,
    RieszKernel,
    apply_line,
    build_domain_operator,
    green_identity_residual,
    make_line_plan,
    make_riesz_kernel,
    nonlocal_normal_derivative,
    riesz_apply,
    solve_screened,
)
from .groundstate import (  # noqa: F401
    GroundState,
    LimitConstants,
    RieszProfile,
    limit_constants,
    nondegeneracy_spectrum,
    rescale_to,
    riesz_profile,
    solve_ground_state,
)
from .greenfn import (  # noqa: F401
    GreenTable,
    SingularSolution,
    regular_part,
    robin_scaling_fit,
    singular_constant,
)
from .projection import ProjectionResult, project, tau_boundary, tau_direct  # noqa: F401
from .poisson import PoissonField, mu_error_scale, phi_expansion_residual, solve_phi  # noqa: F401
from .reduction import (  # noqa: F401
    Corrector,
    EnergyBreakdown,
    ReducedSystem,
    ReductionParams,
    ScanResult,
    concentration_fit,
    energy,
    make_reduction_params,
    scan,
)
