"""Timestepping schemes for impacting mechanical systems with unilateral
constraints: the explicit midpoint rule, its decoupled position-corrected
variant, a unified implicit scheme enforcing impact law and
non-penetration together, and bilateral DAE formulations for the
constraint-drift comparison."""

from .bilateral import BILATERAL_SCHEMES, BilateralStepper, bilateral_step, drift_series
from .config import ConfigError, RunConfig, parse_config, preset, preset_names, serialize_config
from .diagnostics import (
    DriftFit,
    PenetrationStats,
    TrajectoryRecord,
    drift_fit,
    energy_series,
    penetration_stats,
    single_contact_windows,
)
from .models import (
    BilateralSliderCrank,
    BouncingBall,
    BouncingBallParams,
    GeneralizedState,
    MechanicalModel,
    SliderCrankParams,
    UnilateralSliderCrank,
)
from .prox import ProxParams, delassus, delassus_row_scaling, impact_residual, position_residual, prox_nonneg
from .simulate import run_simulation
from .steppers import (
    DecoupledGGLStepper,
    MoreauStepper,
    SolverConfig,
    StepOutcome,
    decoupled_ggl_step,
    moreau_step,
    predict_active_set,
)
from .unified import (
    NewtonReport,
    ReferenceStepper,
    UnifiedStepper,
    UnifiedUnknowns,
    assemble_jacobian,
    assemble_residual,
    gap_linearization,
    reference_step,
    step_basis,
    unified_step,
)

__version__ = "0.1.0"
