"""Open-loop Nash equilibria for two-player games driven by coupled FBSDEs.

The forward state, the backward value pair, per-player adjoint systems, a
projected-gradient equilibrium search, stationarity certificates, and two
reference oracles (exhaustive grid search, matrix Riccati) all live here.
"""

__version__ = "0.1.0"

from .adjoint import (
    AdjointTrajectory,
    DualityReport,
    costate_combination,
    duality_residual,
    solve_adjoint,
)
from .drivers import (
    GENERATOR_NAME,
    Backend,
    BinomialLattice,
    LatticeBackend,
    MonteCarloBackend,
    PathEnsemble,
    RegressionConfig,
    TimeGrid,
    conditional_expectation,
    sample_ensemble,
)
from .equilibrium import (
    BruteForceReport,
    BudgetExceededError,
    EquilibriumReport,
    GateauxReport,
    GradientConfig,
    IterationRecord,
    NonConvergenceError,
    brute_force_nash,
    eval_cost,
    gateaux_derivative,
    solve_nash,
)
from .fbsde import (
    ControlProcess,
    FbsdeConfig,
    NonFiniteStateError,
    PicardDivergenceError,
    SolveDiagnostics,
    StateTrajectory,
    backward_pass,
    forward_pass,
    solve_fbsde,
)
from .hamiltonian import (
    CertificateOptions,
    ConvexityReport,
    HamiltonianPoint,
    PointwiseMinReport,
    VerificationCertificate,
    ViResidualReport,
    build_certificate,
    certificate_as_dict,
    check_convexity,
    check_pointwise_min,
    control_gradient,
    eval_hamiltonian,
    vi_residual,
)
from .lq import AffineMap, LQGameSpec, QuadraticCost, lq_to_problem, random_lq_spec
from .problem import (
    ControlBox,
    CoefficientSet,
    CostSet,
    DerivativeReport,
    Dims,
    GameProblem,
    ShapeValidationError,
    TerminalData,
    ValidationReport,
    check_derivatives,
    validate_problem,
)
from .riccati import RiccatiSolution, predicted_cost, solve_riccati

__all__ = [
    "__version__",
    "AdjointTrajectory",
    "AffineMap",
    "Backend",
    "BinomialLattice",
    "BruteForceReport",
    "BudgetExceededError",
    "CertificateOptions",
    "CoefficientSet",
    "ControlBox",
    "ControlProcess",
    "ConvexityReport",
    "CostSet",
    "DerivativeReport",
    "Dims",
    "DualityReport",
    "EquilibriumReport",
    "FbsdeConfig",
    "GameProblem",
    "GateauxReport",
    "GENERATOR_NAME",
    "GradientConfig",
    "HamiltonianPoint",
    "IterationRecord",
    "LatticeBackend",
    "LQGameSpec",
    "MonteCarloBackend",
    "NonConvergenceError",
    "NonFiniteStateError",
    "PathEnsemble",
    "PicardDivergenceError",
    "PointwiseMinReport",
    "QuadraticCost",
    "RegressionConfig",
    "RiccatiSolution",
    "ShapeValidationError",
    "SolveDiagnostics",
    "StateTrajectory",
    "TerminalData",
    "TimeGrid",
    "ValidationReport",
    "VerificationCertificate",
    "ViResidualReport",
    "backward_pass",
    "brute_force_nash",
    "build_certificate",
    "certificate_as_dict",
    "check_convexity",
    "check_derivatives",
    "check_pointwise_min",
    "conditional_expectation",
    "control_gradient",
    "costate_combination",
    "duality_residual",
    "eval_cost",
    "eval_hamiltonian",
    "forward_pass",
    "gateaux_derivative",
    "lq_to_problem",
    "predicted_cost",
    "random_lq_spec",
    "sample_ensemble",
    "solve_adjoint",
    "solve_fbsde",
    "solve_nash",
    "solve_riccati",
    "validate_problem",
    "vi_residual",
]
