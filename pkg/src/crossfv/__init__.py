"""Finite-volume solver for n-species cross-diffusion systems with runtime
entropy, mass, and nonnegativity certificates."""

from .mesh import (
    Cell,
    Edge,
    Mesh,
    MeshFormatError,
    MeshValidationError,
    build_cartesian,
    format_mesh_file,
    load_mesh,
    regularity_xi,
    validate_mesh,
)
from .model import (
    DetailedBalanceViolation,
    InteractionMatrix,
    ModelData,
    NotPositiveDefinite,
    NotSymmetric,
    build_model,
    detailed_balance_weights,
    entropy_density,
    entropy_to_primal,
    pressure,
    primal_to_entropy,
    smallest_eigenvalue_sym,
    total_entropy,
)
from .scheme import (
    Residual,
    SparseSystem,
    State,
    discrete_h1_norm_sq,
    flux,
    jacobian,
    residual,
    residual_regularized,
    upwind_value,
    upwind_value_pos,
)
from .solver import (
    CertificateViolation,
    NoConvergence,
    SingularSystem,
    SolverConfig,
    StepReport,
    advance,
    epsilon_continuation_solve,
    newton_step_solve,
    simulate_trajectory,
    solve_linear_epsilon,
    solve_sparse,
)
from .diagnostics import (
    ConvergenceReport,
    EntropyCertificate,
    EntropyLedger,
    MeshNotNested,
    discrete_gradient_norm_sq,
    entropy_certificate,
    l2_difference,
    mass_per_species,
    refinement_study,
    weak_bv_functional,
)
from .config import (
    ConfigError,
    InitSpec,
    RunConfig,
    emit_config,
    initial_state,
    parse_config,
)

__version__ = "0.1.0"
