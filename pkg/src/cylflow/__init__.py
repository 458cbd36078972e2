"""Meshless solver for steady viscous flow past cylinder cross-sections.

The unbounded exterior domain is compressed onto a bounded strip, the
transformed steady Navier-Stokes system is collocated with an RBF
partition-of-unity discretisation, the linear equations are eliminated
through a pivoted QR factorisation, and the remaining nonlinear system is
solved by a dogleg trust-region iteration with analytic Jacobians under
Reynolds-number continuation.
"""

from .geometry import (
    Circle,
    ClusterParams,
    Node,
    NodeTag,
    Pointset,
    RoundedSquare,
    Square,
    TransformParams,
    boundary_curve,
    cluster_phi,
    compress_radius,
    decompress_radius,
    generate_pointset,
    physical_coords,
)
from .pum import Cover, CoverageError, Patch, build_cover, shepard_weight_derivatives, shepard_weights, wendland_c2
from .rbf import (
    DiffOperators,
    Discretization,
    KernelParams,
    assemble_diff_matrices,
    evaluate_field,
    imq,
    local_interp_factorization,
    restrict_rows,
)
from .system import (
    DirichletEliminatedSystem,
    FlowProblem,
    LinearBlock,
    ReducedSystem,
    Reduction,
    assemble_linear_block,
    frechet_coefficients,
    jacobian,
    reduce_linear,
    residual,
    sparse_jacobian_alternative,
)
from .trustregion import (
    ContinuationResult,
    SingularJacobianError,
    SolveReport,
    TrustRegionConfig,
    continuation,
    dogleg_step,
    solve,
)
from .flow import (
    FlowMetrics,
    ResidualReport,
    SurfaceProfiles,
    drag_coefficient,
    eddy_centre,
    flow_metrics,
    physical_velocity,
    residual_report,
    surface_profiles,
    vorticity,
    wake_length,
)
from .cli import RunConfig, build_problem, parse_config, run, run_pipeline

__all__ = [name for name in dir() if not name.startswith("_")]
