"""parinla: approximate Bayesian inference for latent Gaussian models.

Sparse GMRF linear algebra (fill-reducing orderings, Cholesky, selected
inversion), Laplace evaluation of the hyperparameter posterior, BFGS with
parallel finite differences and a robust parallel line search, and
posterior marginal assembly, all under an explicit two-level thread
budget.
"""

from .cholesky import (
    CholeskyFactor,
    SelectedInverse,
    SymbolicFactor,
    analyze,
    factorize,
    sample_gmrf,
    selected_inverse,
    selected_inverse_unnormalized,
    solve,
)
from .errors import (
    BatchError,
    BudgetError,
    ConfigError,
    DimensionMismatch,
    InnerDivergence,
    LineSearchFailure,
    NotPositiveDefinite,
    ParinlaError,
    RobustFitError,
    StructureError,
)
from .ordering import (
    AdjacencyGraph,
    Permutation,
    SeparatorTree,
    build_adjacency,
    minimum_degree_order,
    nested_dissection_order,
)
from .runtime import (
    SERIAL,
    ThreadBudget,
    default_budget,
    parse_budget,
    reset_runtime_stats,
    run_batch,
    runtime_stats,
)
from .fit import FitConfig, FitResult, fit
from .marginals import (
    IntegrationPoint,
    MarginalResult,
    explore_grid,
    hyper_marginals,
    latent_marginals,
)
from .model import (
    Component,
    HyperParams,
    ModelSpec,
    assemble_prior_precision,
    build_design,
    likelihood_terms,
    load_model,
    log_prior_hyper,
)
from .objective import GaussianApprox, ObjectiveEvaluator, ObjectiveValue
from .optimizer import (
    BFGSState,
    FDConfig,
    LineSearchConfig,
    OptimizeConfig,
    OptimizeResult,
    RobustFit,
    bfgs_update,
    fd_gradient,
    fd_hessian,
    optimize,
    parallel_line_search,
    robust_quadratic_fit,
    serial_armijo_search,
)
from .sparse import SparseSymMatrix, read_matrix_market, write_matrix_market
from .synth import make_synth, write_synth

__version__ = "0.1.0"

__all__ = [
    "AdjacencyGraph",
    "BFGSState",
    "BatchError",
    "BudgetError",
    "CholeskyFactor",
    "Component",
    "ConfigError",
    "DimensionMismatch",
    "FDConfig",
    "FitConfig",
    "FitResult",
    "GaussianApprox",
    "HyperParams",
    "InnerDivergence",
    "IntegrationPoint",
    "LineSearchConfig",
    "LineSearchFailure",
    "MarginalResult",
    "ModelSpec",
    "NotPositiveDefinite",
    "ObjectiveEvaluator",
    "ObjectiveValue",
    "OptimizeConfig",
    "OptimizeResult",
    "ParinlaError",
    "Permutation",
    "RobustFit",
    "RobustFitError",
    "SERIAL",
    "SelectedInverse",
    "SeparatorTree",
    "SparseSymMatrix",
    "StructureError",
    "SymbolicFactor",
    "ThreadBudget",
    "analyze",
    "assemble_prior_precision",
    "bfgs_update",
    "build_adjacency",
    "build_design",
    "default_budget",
    "explore_grid",
    "factorize",
    "fd_gradient",
    "fd_hessian",
    "fit",
    "hyper_marginals",
    "latent_marginals",
    "likelihood_terms",
    "load_model",
    "log_prior_hyper",
    "make_synth",
    "minimum_degree_order",
    "nested_dissection_order",
    "optimize",
    "parallel_line_search",
    "parse_budget",
    "read_matrix_market",
    "reset_runtime_stats",
    "robust_quadratic_fit",
    "run_batch",
    "runtime_stats",
    "sample_gmrf",
    "selected_inverse",
    "selected_inverse_unnormalized",
    "serial_armijo_search",
    "solve",
    "write_matrix_market",
    "write_synth",
]
