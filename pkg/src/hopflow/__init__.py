"""Legged-robot motion planning via the affine geometric heat flow.

A time-varying Riemannian metric encodes the hopper's hybrid dynamics and
contact constraints so that short curves are admissible motions; the heat
flow deforms an arbitrary boundary-matching curve into one, after which
controls are extracted, the true dynamics rolled out, and every constraint
audited on the result.
"""

from .constraints import (
    AugmentedSystem,
    ConstraintSpec,
    augment,
    build_locomotion_constraints,
    constraint_activation,
    switch,
)
from .extraction import (
    AuditReport,
    AuditThresholds,
    PlanResult,
    audit,
    extract_controls,
    integrate,
    plan_outputs,
    planning_error,
)
from .metric import (
    LagrangianEvaluator,
    PenaltyMatrix,
    constant_penalty,
    euler_lagrange_rhs,
    legged_penalty,
    metric,
    penalty_matrix,
)
from .model import (
    ControlAffineSystem,
    LeggedSystem,
    RankDeficient,
    RobotParams,
    StateLayout,
    Terrain,
    ZeroGradient,
    control_matrix,
    cross2d,
    drift,
    drift_jacobian,
    flat_terrain,
    gram_schmidt_completion,
    sinusoid_terrain,
    terrain_frame,
)
from .schedule import (
    ContactSchedule,
    InvalidOffset,
    SmoothingParams,
    activation,
    activation_time_derivative,
    equal_ratio_schedule,
    smooth_heaviside,
    smooth_heaviside_derivative,
)
from .solver import (
    BoundarySpec,
    CurveGrid,
    SolveResult,
    SolverConfig,
    StepDiverged,
    apply_boundary,
    flow_step,
    initial_curve,
    solve,
    write_trace_csv,
)

__version__ = "0.1.0"
