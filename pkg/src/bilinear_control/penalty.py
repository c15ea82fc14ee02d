"""Forward-backward sweep for the penalized problem min J_eps(u).

At a stationary point the control satisfies

    u(t) = -B(., y(t))* phi(t) / (eps r)                     (V = L2(0,T;U))
    u(t) = -B(., y(t))* phi(t) / (||H'(u)||/M + eps r)        (L2 ball of radius M)

with ``H'(u)(t) = eps r u(t) + B(., y(t))* phi(t)``.  The sweep alternates a
forward solve, an adjoint solve and one of these updates, mixing the new
control into the old one with a relaxation factor.

Plain relaxation is gradient descent with step ``omega/(eps r)``; the
endpoint penalty adds a stiff direction of size about ``2 ||y(T)||^2 T``,
so for small ``eps`` a fixed ``omega`` has to be tiny.  The default
``relaxation="adaptive"`` picks ``omega`` each sweep from the last two
residuals (a Barzilai-Borwein quotient), clipped to ``(0, 1]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    ControlSignal,
    TimeGrid,
    Trajectory,
    cost_J,
    cost_Jeps,
    endpoint_residual,
    solve_adjoint,
    solve_forward,
)
from .errors import ConfigurationError, DimensionError, DivergenceError
from .spaces import StateVector, SystemModel

log = logging.getLogger(__name__)

_OMEGA_MIN = 1e-8


@dataclass(frozen=True)
class PenaltyConfig:
    eps: float
    r: float
    ball_radius_M: float | None = None
    max_iters: int = 500
    fixed_point_tol: float = 1e-8
    relaxation_omega: float = 0.5
    relaxation: str = "adaptive"

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigurationError(f"eps must be positive, got {self.eps}")
        if not self.r > 0:
            raise ConfigurationError(f"r must be positive, got {self.r}")
        if self.ball_radius_M is not None and not self.ball_radius_M > 0:
            raise ConfigurationError(f"ball_radius_M must be positive, got {self.ball_radius_M}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ConfigurationError("max_iters must be a positive integer")
        if not self.fixed_point_tol > 0:
            raise ConfigurationError("fixed_point_tol must be positive")
        if not 0 < self.relaxation_omega <= 1:
            raise ConfigurationError(
                f"relaxation_omega must lie in (0, 1], got {self.relaxation_omega}"
            )
        if self.relaxation not in ("fixed", "adaptive"):
            raise ConfigurationError("relaxation must be 'fixed' or 'adaptive'")


@dataclass
class SolveReport:
    iterations: int = 0
    converged: bool = False
    residual_history: list[float] = field(default_factory=list)
    J_value: float = float("nan")
    Jeps_value: float = float("nan")
    endpoint_gap: float = float("nan")
    control_l2_norm: float = float("nan")
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "residual_history": list(self.residual_history),
            "J_value": self.J_value,
            "Jeps_value": self.Jeps_value,
            "endpoint_gap": self.endpoint_gap,
            "control_l2_norm": self.control_l2_norm,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SolveReport":
        return cls(**d)


def _check_aligned(u: ControlSignal, *trajs: Trajectory) -> None:
    for tr in trajs:
        if tr.tgrid != u.tgrid:
            raise DimensionError("control and trajectories use different time grids")
        if u.grid is not None and tr.grid != u.grid:
            raise DimensionError("field control and trajectories use different spatial grids")


def adjoint_control_signal(y_traj: Trajectory, phi_traj: Trajectory, scalar: bool) -> np.ndarray:
    """Nodal values of t -> B(., y(t))* phi(t) for the multiplicative operator."""
    if y_traj.tgrid != phi_traj.tgrid or y_traj.grid != phi_traj.grid:
        raise DimensionError("state and adjoint trajectories use different grids")
    prod = y_traj.states * phi_traj.states
    if scalar:
        return prod @ y_traj.grid.weights
    return prod


def _signal_like(u_kind_scalar: bool, y_traj: Trajectory, values) -> ControlSignal:
    return ControlSignal(y_traj.tgrid, values, None if u_kind_scalar else y_traj.grid)


def hamiltonian_gradient(
    u: ControlSignal, y_traj: Trajectory, phi_traj: Trajectory, eps: float, r: float
) -> ControlSignal:
    """H'(u)(t) = eps r u(t) + B(., y(t))* phi(t)."""
    _check_aligned(u, y_traj, phi_traj)
    scalar = u.grid is None
    bstar = adjoint_control_signal(y_traj, phi_traj, scalar)
    return u.with_values(eps * r * u.values + bstar)


def control_update_unconstrained(
    y_traj: Trajectory, phi_traj: Trajectory, eps: float, r: float, scalar: bool = True
) -> ControlSignal:
    """u(t) = -B(., y(t))* phi(t) / (eps r)."""
    if not eps * r > 0:
        raise ConfigurationError("eps * r must be positive")
    bstar = adjoint_control_signal(y_traj, phi_traj, scalar)
    return _signal_like(scalar, y_traj, -bstar / (eps * r))


def control_update_ball(
    y_traj: Trajectory,
    phi_traj: Trajectory,
    eps: float,
    r: float,
    M: float,
    u_current: ControlSignal,
) -> ControlSignal:
    """Optimality update on the L2(0,T;U) ball of radius ``M``.

    The gradient norm in the denominator is taken at ``u_current``.  If
    ``u_current`` lies in the ball, so does the result.
    """
    if not M > 0:
        raise ConfigurationError(f"ball radius must be positive, got {M}")
    scalar = u_current.grid is None
    free = control_update_unconstrained(y_traj, phi_traj, eps, r, scalar)
    if free.l2_norm() <= M:
        return free
    g_norm = hamiltonian_gradient(u_current, y_traj, phi_traj, eps, r).l2_norm()
    bstar = adjoint_control_signal(y_traj, phi_traj, scalar)
    return free.with_values(-bstar / (g_norm / M + eps * r))


def _project_ball(u: ControlSignal, M: float) -> ControlSignal:
    n = u.l2_norm()
    return u if n <= M else u.with_values(u.values * (M / n))


def _relaxed_step(model, y0, y_d, config, u, y_traj, d, omega, first):
    """u + omega*d, halving omega while the forward solve diverges.

    In adaptive mode the opening step has no curvature estimate yet, so it
    is also halved until J_eps does not increase.
    """
    guard_cost = first and config.relaxation == "adaptive"
    if guard_cost:
        j_old = cost_Jeps(u, y_traj, y_d, config.eps, config.r)
    while True:
        cand = u.with_values(u.values + omega * d)
        if config.ball_radius_M is not None:
            cand = _project_ball(cand, config.ball_radius_M)
        try:
            y_new = solve_forward(model, y0, cand, u.tgrid)
        except DivergenceError:
            if omega <= _OMEGA_MIN:
                raise
            omega *= 0.5
            continue
        if guard_cost and omega > _OMEGA_MIN and (
            cost_Jeps(cand, y_new, y_d, config.eps, config.r) > j_old
        ):
            omega *= 0.5
            continue
        return cand, y_new


def solve_penalized(
    model: SystemModel,
    y0: StateVector,
    y_d: StateVector,
    config: PenaltyConfig,
    u_init: ControlSignal,
) -> tuple[ControlSignal, Trajectory, SolveReport]:
    """Relaxed forward-backward sweep for (P_eps).

    Convergence is declared when ``||u_new - u|| <= tol * (1 + ||u||)`` in
    L2(0,T;U).  Non-convergence is reported, not raised; divergence of the
    state or adjoint propagates as :class:`DivergenceError`.
    """
    tgrid: TimeGrid = u_init.tgrid
    eps, r, M = config.eps, config.r, config.ball_radius_M
    report = SolveReport()

    u = u_init if M is None else _project_ball(u_init, M)
    prev_u = prev_d = None
    y_traj = solve_forward(model, y0, u, tgrid)
    for it in range(1, config.max_iters + 1):
        phi = solve_adjoint(model, u, y_traj, y_d, eps, tgrid)
        if M is None:
            u_new = control_update_unconstrained(y_traj, phi, eps, r, model.is_scalar)
        else:
            u_new = control_update_ball(y_traj, phi, eps, r, M, u)
        d = u_new.values - u.values
        res = u_new.with_values(d).l2_norm() / (1.0 + u.l2_norm())
        report.residual_history.append(res)
        report.iterations = it
        if res <= config.fixed_point_tol:
            report.converged = True
            break

        omega = config.relaxation_omega
        if config.relaxation == "adaptive" and prev_u is not None:
            s = u.with_values(u.values - prev_u)
            dy = u.with_values(prev_d - d)
            sy = s.l2_inner(dy)
            if sy > 0:
                omega = float(np.clip(s.l2_inner(s) / sy, _OMEGA_MIN, 1.0))
        u_old_values = u.values
        u, y_traj = _relaxed_step(model, y0, y_d, config, u, y_traj, d, omega,
                                  first=prev_u is None)
        prev_u, prev_d = u_old_values, d

    hist = report.residual_history
    if len(hist) > 4 and np.any(np.diff(hist[3:]) > 0):
        msg = "fixed-point residual increased after the third sweep"
        report.warnings.append(msg)
        log.debug(msg)
    if not report.converged:
        log.info("penalized solve (eps=%g) stopped after %d sweeps, residual %.3e",
                 eps, report.iterations, hist[-1])

    report.J_value = cost_J(u, y_traj, r)
    report.Jeps_value = cost_Jeps(u, y_traj, y_d, eps, r)
    report.endpoint_gap = endpoint_residual(y_traj, y_d)
    report.control_l2_norm = u.l2_norm()
    return u, y_traj, report
