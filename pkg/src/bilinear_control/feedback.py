"""Time-varying feedback representation for commutative scalar-control systems.

When A commutes with B and the control is scalar, an optimal control of the
endpoint-constrained problem satisfies

    u(t) = mean(v) + 2/(T r) int_0^T G(a) da - (2/r) G(t),
    G(t) = int_t^T <y(s), B y(s)> ds,

for any admissible reference control ``v``.  The law is implicit in ``u``
through ``y``; :func:`solve_feedback` finds its fixed point by relaxed
iteration started from ``v``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .continuation import check_admissible
from .dynamics import (
    ControlSignal,
    TimeGrid,
    Trajectory,
    apply_semigroup,
    cost_J,
    endpoint_residual,
    solve_forward,
)
from .errors import ConfigurationError, PreconditionError, UnsupportedError
from .penalty import SolveReport
from .spaces import StateVector, SystemModel

KERNEL_RTOL = 1e-10


@dataclass(frozen=True)
class FeedbackConfig:
    reference_v: ControlSignal
    r: float
    max_outer_iters: int = 500
    tol: float = 1e-10
    relaxation_omega: float = 0.3
    admissibility_tol: float = 1e-6

    def __post_init__(self):
        if not self.r > 0:
            raise ConfigurationError(f"r must be positive, got {self.r}")
        if int(self.max_outer_iters) != self.max_outer_iters or self.max_outer_iters < 1:
            raise ConfigurationError("max_outer_iters must be a positive integer")
        if not self.tol > 0 or not self.admissibility_tol > 0:
            raise ConfigurationError("tolerances must be positive")
        if not 0 < self.relaxation_omega <= 1:
            raise ConfigurationError("relaxation_omega must lie in (0, 1]")
        if self.reference_v.grid is not None:
            raise UnsupportedError("the feedback law needs a scalar reference control")


def _default_tgrid(model: SystemModel, T: float) -> TimeGrid:
    return TimeGrid(T, max(1, round(T / model.grid.dx)))


def kernel_check(
    model: SystemModel, y0: StateVector, T: float, tgrid: TimeGrid | None = None
) -> bool:
    """Whether S(T) y0 stays clear of Ker(B), i.e. ||S(T) y0|| > 1e-10 ||y0||.

    Without ``tgrid`` the semigroup is stepped with ``dt = dx``.
    """
    if not model.is_scalar:
        raise UnsupportedError("kernel check is defined for scalar control only")
    if tgrid is None:
        tgrid = _default_tgrid(model, T)
    elif abs(tgrid.horizon_T - T) > 1e-12 * T:
        raise ConfigurationError("tgrid horizon differs from T")
    y_T = apply_semigroup(model, y0, tgrid)
    return y_T.norm() > KERNEL_RTOL * y0.norm()


def energy_tail(y_traj: Trajectory) -> np.ndarray:
    """G(t_k) = int_{t_k}^T ||y(s)||^2 ds by the trapezoid rule."""
    e = y_traj.sq_norms()
    head = cumulative_trapezoid(e, dx=y_traj.tgrid.dt, initial=0.0)
    return head[-1] - head


def feedback_formula(y_traj: Trajectory, v: ControlSignal, r: float, T: float) -> ControlSignal:
    """Evaluate the feedback law on a given trajectory (B = identity multiplication)."""
    if v.grid is not None:
        raise UnsupportedError("the feedback law is defined for scalar control only")
    tg = y_traj.tgrid
    if v.tgrid != tg or abs(tg.horizon_T - T) > 1e-12 * T:
        raise ConfigurationError("control, trajectory and horizon do not match")
    G = energy_tail(y_traj)
    double = float(tg.weights @ G)
    return v.with_values(float(v.integral()) / T + 2.0 / (T * r) * double - (2.0 / r) * G)


def solve_feedback(
    model: SystemModel, y0: StateVector, config: FeedbackConfig, y_d: StateVector | None = None
) -> tuple[ControlSignal, Trajectory, SolveReport]:
    """Fixed point of the feedback law, started from the reference control.

    ``y_d`` defaults to the endpoint reached by the reference control; when
    given, the reference must reach it within ``admissibility_tol``.
    """
    if not model.is_scalar:
        raise UnsupportedError("the feedback law is defined for scalar control only")
    v = config.reference_v
    tg = v.tgrid
    T = tg.horizon_T
    if not kernel_check(model, y0, T, tg):
        raise PreconditionError("S(T) y0 lies in Ker(B); the feedback law does not apply")
    if y_d is None:
        y_d = solve_forward(model, y0, v, tg).final
    elif not check_admissible(model, y0, v, y_d, config.admissibility_tol):
        raise PreconditionError("the reference control does not reach y_d")

    report = SolveReport()
    omega = config.relaxation_omega
    u = v
    y = solve_forward(model, y0, u, tg)
    for it in range(1, config.max_outer_iters + 1):
        u_new = feedback_formula(y, v, config.r, T)
        res = u.with_values(u_new.values - u.values).l2_norm() / (1.0 + u.l2_norm())
        report.residual_history.append(res)
        report.iterations = it
        if res <= config.tol:
            report.converged = True
            u = u_new
            y = solve_forward(model, y0, u, tg)
            break
        u = u.with_values((1.0 - omega) * u.values + omega * u_new.values)
        y = solve_forward(model, y0, u, tg)

    report.J_value = cost_J(u, y, config.r)
    report.endpoint_gap = endpoint_residual(y, y_d)
    report.control_l2_norm = u.l2_norm()
    return u, y, report
