"""Constrained signal reconstruction via randomized epigraphical projection.

Minimizes separable regularizers subject to a hard l2 data-fidelity
constraint and a box constraint. The fidelity ball is rewritten as
per-block epigraph constraints so a stochastic primal-dual solver can
activate one block per iteration; a deterministic primal-dual baseline
and a parallel-beam CT experiment harness are included.
"""

from .linops import (
    BlockPartition,
    FileFormatError,
    GradientOperator,
    SparseMatrix,
    VStackOperator,
    apply_gradient,
    apply_gradient_adjoint,
    block_view,
    matvec,
    operator_norm,
    partition_rows,
    read_csr,
    read_vec,
    rmatvec,
    write_csr,
    write_vec,
)
from .prox import (
    Box,
    EpigraphBall,
    SumHalfspace,
    conjugate_prox,
    project_box,
    project_l2_ball,
    project_squared_distance_epigraph,
    project_sum_halfspace,
    soft_threshold,
    squared_distance_epigraph_root,
)
from .ct import (
    Observation,
    RadonGeometry,
    build_radon_matrix,
    default_detector_count,
    partition_for_blocks,
    read_pgm,
    shepp_logan_phantom,
    simulate_observation,
    write_pgm,
)
from .metrics import (
    ConvergenceRecord,
    FeasibilityReport,
    constraint_error,
    feasibility_report,
    primal_distance,
    psnr,
    tv_objective,
)
from .solvers import (
    DivergenceError,
    DualState,
    PdhgDualState,
    PrimalState,
    ProblemSpec,
    SolveResult,
    SolverConfig,
    build_tv_problem,
    default_states,
    pdhg_deterministic_solve,
    sample_indices,
    spdhg_epi_solve,
    spdhg_full_activation_step,
    stepsizes,
)

__version__ = "0.1.0"
