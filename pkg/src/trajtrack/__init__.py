"""Trajectory optimization and feedback-feedforward tracking for
autonomous vehicles: a convex trajectory optimizer over a linearized
kinematic bicycle model, a TVLQR tracking controller, and a multi-rate
closed-loop simulator."""

from .closed_loop import (
    RunConfig,
    RunLog,
    TrackingMetrics,
    compute_metrics,
    input_smoothness,
    run,
)
from .config import ConfigError, Scenario, load_scenario
from .ffmpc import (
    CondensedDynamics,
    ConstraintSet,
    FeedforwardPlan,
    FfWeights,
    InputHistory,
    StateBound,
    build_constraints,
    build_cost,
    condense,
    difference_matrix,
    optimize_trajectory,
)
from .qp import (
    Infeasible,
    IterationLimit,
    NotStrictlyConvex,
    QpError,
    QpSolution,
    QuadraticProgram,
    check_strict_convexity,
    kkt_residual,
    solve,
)
from .trajectory import (
    AugmentedReference,
    NominalTrajectory,
    ReferenceTrajectory,
    Segment,
    augment_reference,
    generate_piecewise_reference,
    load_reference_csv,
    reference_derived_inputs,
    save_reference_csv,
)
from .tvlqr import (
    ErrorState,
    GainSchedule,
    TvlqrWeights,
    augment_dynamics,
    error_jacobian,
    feedback,
    riccati_gains,
)
from .vehicle import (
    ControlInput,
    ModelParams,
    PlantConfig,
    VehicleState,
    derivative,
    linearize,
    step_nonlinear,
    step_plant,
)

__version__ = "0.1.0"
