"""Quadratic optimal control of bilinear systems y' = Ay + B(u, y) with an endpoint constraint."""

from .continuation import (
    ContinuationConfig,
    ContinuationReport,
    StageRecord,
    check_admissible,
    solve_constrained,
)
from .dynamics import (
    ControlSignal,
    TimeGrid,
    Trajectory,
    apply_semigroup,
    commutative_closed_form,
    cost_J,
    cost_Jeps,
    endpoint_residual,
    solve_adjoint,
    solve_forward,
    step_semigroup,
)
from .errors import (
    BilinearControlError,
    ConfigurationError,
    DimensionError,
    DivergenceError,
    PreconditionError,
    UnsupportedError,
)
from .feedback import FeedbackConfig, feedback_formula, kernel_check, solve_feedback
from .penalty import (
    PenaltyConfig,
    SolveReport,
    control_update_ball,
    control_update_unconstrained,
    hamiltonian_gradient,
    solve_penalized,
)
from .spaces import (
    ControlSpace,
    ControlValue,
    Generator,
    Grid,
    MultiplicationOperator,
    StateVector,
    SystemModel,
    inner,
    norm,
)

__version__ = "0.1.0"
