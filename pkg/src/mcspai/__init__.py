"""Monte Carlo sparse approximate inverse preconditioners with Krylov validation."""

from .engine import (
    ApproxInverse,
    ChainBudget,
    McConfig,
    RngStreamSpec,
    compute_preconditioner,
    derive_chain_budget,
    estimate_row,
    retain_top_k,
    scale_columns,
)
from .recovery import RecoveryPlan, SingularUpdateError, recover_inverse
from .solvers import Method, SolveReport, SolverConfig, bicgstab, gmres, solve
from .sparse import (
    CsrMatrix,
    MatrixMarketError,
    SingularMatrixError,
    ValueRange,
    dense_inverse_oracle,
    drop_small_entries,
    inf_norm,
    parse_matrix_market,
    spmv,
    value_range,
    write_matrix_market,
)
from .split import (
    AugmentationMode,
    DegenerateDiagonalError,
    DominanceError,
    SplitSystem,
    augment_and_split,
    transition_probabilities,
)

__version__ = "0.1.0"
