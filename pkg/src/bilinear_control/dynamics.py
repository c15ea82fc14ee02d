"""Time integration of y' = Ay + B(u, y), its adjoint, and the quadratic costs.

The forward solver uses Strang splitting: the step from ``t_k`` to
``t_{k+1}`` applies ``exp(dt/2 * u_k)``, one step of the free semigroup, then
``exp(dt/2 * u_{k+1})``.  For scalar controls the accumulated exponent is the
trapezoid integral of ``u``.  The free step is an exact one-cell shift for
transport (which forces ``dt == dx``) and a Crank-Nicolson step for the heat
equation.

The adjoint solver runs the transpose of the discrete forward map backwards
in time.  Internally it carries the Euclidean costate ``lam``; the returned
trajectory is its Riesz representative ``phi`` with respect to the
trapezoid inner product, corrected for the part of the nodal running cost
that enters after the control factor.  With this choice
``eps*r*u(t_k) + B(., y(t_k))* phi(t_k)`` is exactly the L2(0,T;U) gradient
of the discrete ``J_eps``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import cho_solve_banded, cholesky_banded

from .errors import ConfigurationError, DimensionError, DivergenceError, UnsupportedError
from .spaces import ControlSpace, ControlValue, Generator, Grid, StateVector, SystemModel

DIVERGENCE_NORM = 1e12


@dataclass(frozen=True)
class TimeGrid:
    horizon_T: float
    n_steps: int

    def __post_init__(self):
        if not self.horizon_T > 0:
            raise ConfigurationError(f"horizon_T must be positive, got {self.horizon_T}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigurationError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "horizon_T", float(self.horizon_T))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @classmethod
    def from_step(cls, horizon_T: float, dt: float) -> "TimeGrid":
        n = round(horizon_T / dt)
        if n < 1 or abs(n * dt - horizon_T) > 1e-9 * max(1.0, horizon_T):
            raise ConfigurationError(f"dt={dt} does not divide the horizon T={horizon_T}")
        return cls(horizon_T, n)

    @property
    def dt(self) -> float:
        return self.horizon_T / self.n_steps

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_nodes)

    @property
    def weights(self) -> np.ndarray:
        w = np.full(self.n_nodes, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w

    def node_index(self, t: float) -> int:
        k = round(t / self.dt)
        if not 0 <= k <= self.n_steps or abs(k * self.dt - t) > 1e-9 * max(1.0, self.horizon_T):
            raise DimensionError(f"t={t} is not a node of {self}")
        return k


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ControlSignal:
    """Nodal samples of a control on a time grid.

    ``values`` has shape ``(n_t,)`` for scalar controls and ``(n_t, n_x)``
    for field controls; field controls also carry their spatial grid.
    """

    tgrid: TimeGrid
    values: np.ndarray
    grid: Grid | None = field(default=None)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        n_t = self.tgrid.n_nodes
        if self.grid is None:
            if v.shape != (n_t,):
                raise DimensionError(f"scalar control has shape {v.shape}, expected ({n_t},)")
        elif v.shape != (n_t, self.grid.n_nodes):
            raise DimensionError(
                f"field control has shape {v.shape}, expected ({n_t}, {self.grid.n_nodes})"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("control contains non-finite entries")
        object.__setattr__(self, "values", _readonly(v))

    @classmethod
    def zeros(cls, model: SystemModel, tgrid: TimeGrid) -> "ControlSignal":
        if model.is_scalar:
            return cls(tgrid, np.zeros(tgrid.n_nodes))
        return cls(tgrid, np.zeros((tgrid.n_nodes, model.grid.n_nodes)), model.grid)

    @classmethod
    def from_function(cls, model: SystemModel, tgrid: TimeGrid, func) -> "ControlSignal":
        """Sample ``func(t)`` (scalar) or ``func(t, x)`` (field) on the grids."""
        t = tgrid.times
        if model.is_scalar:
            return cls(tgrid, np.broadcast_to(func(t), t.shape))
        x = model.grid.nodes
        vals = func(t[:, None], x[None, :])
        return cls(tgrid, np.broadcast_to(vals, (t.size, x.size)), model.grid)

    @property
    def kind(self) -> ControlSpace:
        return ControlSpace.SCALAR if self.grid is None else ControlSpace.DISTRIBUTED

    def with_values(self, values) -> "ControlSignal":
        return ControlSignal(self.tgrid, values, self.grid)

    def at(self, k: int) -> ControlValue:
        if self.grid is None:
            return ControlValue.scalar(self.values[k])
        return ControlValue.field(self.grid, self.values[k])

    def pointwise_sq_norms(self) -> np.ndarray:
        """||u(t_k)||_U^2 at every time node."""
        if self.grid is None:
            return self.values**2
        return self.values**2 @ self.grid.weights

    def l2_inner(self, other: "ControlSignal") -> float:
        """Inner product in L2(0,T;U) (trapezoid in time and, for fields, in space)."""
        _check_compatible(self, other)
        prod = self.values * other.values
        if self.grid is not None:
            prod = prod @ self.grid.weights
        return float(self.tgrid.weights @ prod)

    def l2_norm(self) -> float:
        return float(np.sqrt(self.tgrid.weights @ self.pointwise_sq_norms()))

    def integral(self) -> float | np.ndarray:
        """Trapezoid integral over [0, T]."""
        return self.tgrid.weights @ self.values

    def cumulative_integral(self) -> np.ndarray:
        """Trapezoid integrals over [0, t_k] for every node."""
        return cumulative_trapezoid(self.values, dx=self.tgrid.dt, axis=0, initial=0.0)


def _check_compatible(a: ControlSignal, b: ControlSignal) -> None:
    if a.tgrid != b.tgrid or a.grid != b.grid:
        raise DimensionError("control signals live on different grids")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States (or adjoint states) at every time node, shape ``(n_t, n_x)``."""

    tgrid: TimeGrid
    grid: Grid
    states: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.states, dtype=float)
        if s.shape != (self.tgrid.n_nodes, self.grid.n_nodes):
            raise DimensionError(
                f"trajectory has shape {s.shape}, expected "
                f"({self.tgrid.n_nodes}, {self.grid.n_nodes})"
            )
        if not np.all(np.isfinite(s)):
            raise ValueError("trajectory contains non-finite entries")
        if s.flags.writeable:
            s = _readonly(s.copy() if s is self.states else s)
        object.__setattr__(self, "states", s)

    def __len__(self):
        return self.tgrid.n_nodes

    def __getitem__(self, k: int) -> StateVector:
        return StateVector(self.grid, self.states[k])

    @property
    def final(self) -> StateVector:
        return self[-1]

    def sq_norms(self) -> np.ndarray:
        """||y(t_k)||^2 at every time node."""
        return self.states**2 @ self.grid.weights


# ---------------------------------------------------------------------------
# free semigroup steps on raw arrays


class _HeatStep:
    """Crank-Nicolson step of the 3-point Dirichlet Laplacian (interior nodes)."""

    def __init__(self, grid: Grid, dt: float):
        n = grid.n_cells - 1
        if n < 1:
            raise ConfigurationError("heat grid needs at least one interior node")
        c = dt / (2.0 * grid.dx**2)
        self._c = c
        # upper banded form of I - dt/2 L, which is symmetric positive definite
        ab = np.empty((2, n))
        ab[0, :] = -c
        ab[1, :] = 1.0 + 2.0 * c
        self._chol = cholesky_banded(ab, lower=False, check_finite=False)

    def __call__(self, y: np.ndarray) -> np.ndarray:
        inner = y[1:-1]
        rhs = (1.0 - 2.0 * self._c) * inner
        rhs[1:] += self._c * inner[:-1]
        rhs[:-1] += self._c * inner[1:]
        out = np.zeros_like(y)
        out[1:-1] = cho_solve_banded((self._chol, False), rhs, check_finite=False)
        return out

    # the interior CN map is a rational function of a symmetric matrix
    transpose = __call__


def _shift_right(y: np.ndarray) -> np.ndarray:
    out = np.empty_like(y)
    out[0] = 0.0
    out[1:] = y[:-1]
    return out


def _shift_left(lam: np.ndarray) -> np.ndarray:
    out = np.empty_like(lam)
    out[-1] = 0.0
    out[:-1] = lam[1:]
    return out


class _TransportStep:
    __call__ = staticmethod(_shift_right)
    transpose = staticmethod(_shift_left)


def _check_transport_dt(model: SystemModel, dt: float) -> None:
    if model.generator is Generator.TRANSPORT_RIGHT_SHIFT:
        dx = model.grid.dx
        if abs(dt - dx) > 1e-9 * dx:
            raise ConfigurationError(
                f"transport uses exact-shift stepping, which requires dt == dx "
                f"(got dt={dt}, dx={dx})"
            )


@lru_cache(maxsize=32)
def _stepper(model: SystemModel, dt: float):
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    _check_transport_dt(model, dt)
    if model.generator is Generator.TRANSPORT_RIGHT_SHIFT:
        return _TransportStep()
    return _HeatStep(model.grid, dt)


def step_semigroup(model: SystemModel, y: StateVector, dt: float) -> StateVector:
    """Advance the uncontrolled system by one step of length ``dt``."""
    if y.grid != model.grid:
        raise DimensionError("state is not on the model grid")
    return StateVector(model.grid, _stepper(model, dt)(y.values))


def apply_semigroup(model: SystemModel, y: StateVector, tgrid: TimeGrid, k: int | None = None):
    """S(t_k) y by ``k`` composed steps (``k`` defaults to the full horizon)."""
    step = _stepper(model, tgrid.dt)
    v = y.values.copy()
    for _ in range(tgrid.n_steps if k is None else k):
        v = step(v)
    return StateVector(model.grid, v)


# ---------------------------------------------------------------------------
# forward and adjoint solves


def _check_inputs(model: SystemModel, u: ControlSignal, tgrid: TimeGrid) -> None:
    if u.tgrid != tgrid:
        raise DimensionError("control is not sampled on the given time grid")
    if u.kind is not model.control_space:
        raise ConfigurationError(
            f"{u.kind.value} control passed to a {model.control_space.value}-control model"
        )
    if u.grid is not None and u.grid != model.grid:
        raise DimensionError("field control is not on the model grid")
    _check_transport_dt(model, tgrid.dt)


def _half_factors(u: ControlSignal) -> np.ndarray:
    return np.exp(0.5 * u.tgrid.dt * u.values)


def _guard(v: np.ndarray, weights: np.ndarray, step: int, what: str) -> None:
    nrm2 = float(weights @ (v * v))
    if not np.isfinite(nrm2) or nrm2 > DIVERGENCE_NORM**2:
        raise DivergenceError(f"{what} diverged at step {step} (norm^2={nrm2:.3e})", step=step)


def solve_forward(model: SystemModel, y0: StateVector, u: ControlSignal, tgrid: TimeGrid) -> Trajectory:
    """Mild solution on ``tgrid`` by Strang splitting."""
    _check_inputs(model, u, tgrid)
    if y0.grid != model.grid:
        raise DimensionError("initial state is not on the model grid")
    step = _stepper(model, tgrid.dt)
    half = _half_factors(u)
    w = model.grid.weights
    out = np.empty((tgrid.n_nodes, model.grid.n_nodes))
    out[0] = y = y0.values
    for k in range(tgrid.n_steps):
        y = half[k + 1] * step(half[k] * y)
        _guard(y, w, k + 1, "forward state")
        out[k + 1] = y
    return Trajectory(tgrid, model.grid, _readonly(out))


def solve_adjoint(
    model: SystemModel,
    u: ControlSignal,
    y_traj: Trajectory,
    y_d: StateVector,
    eps: float,
    tgrid: TimeGrid,
) -> Trajectory:
    """Backward costate for ``J_eps`` along ``y_traj``.

    Solves the transposed Strang recursion, which is the discrete form of
    ``phi' = -A* phi - B*(u, phi) - 2 eps y`` with ``phi(T) = 2 (y(T) - y_d)``.
    The discrete terminal value carries an extra ``eps * dt * y(T)`` from the
    trapezoid end weight of the running cost.
    """
    _check_inputs(model, u, tgrid)
    if y_traj.tgrid != tgrid or y_traj.grid != model.grid or y_d.grid != model.grid:
        raise DimensionError("trajectory, target and model grids do not match")
    step = _stepper(model, tgrid.dt)
    half = _half_factors(u)
    w = model.grid.weights
    tw = tgrid.weights
    Y = y_traj.states
    phi = np.empty_like(Y)

    # share of the running-cost term not seen by the control factor at t_k
    shift = np.ones(tgrid.n_nodes)
    shift[0], shift[-1] = 2.0, 0.0
    lam = 2.0 * w * (Y[-1] - y_d.values) + 2.0 * eps * tw[-1] * w * Y[-1]
    phi[-1] = lam / w
    for k in range(tgrid.n_steps - 1, -1, -1):
        lam = half[k] * step.transpose(half[k + 1] * lam) + 2.0 * eps * tw[k] * w * Y[k]
        _guard(lam / w, w, k, "adjoint state")
        phi[k] = lam / w - shift[k] * eps * tw[k] * Y[k]
    if model.generator is Generator.HEAT_DIRICHLET:
        phi[:, 0] = phi[:, -1] = 0.0
    return Trajectory(tgrid, model.grid, _readonly(phi))


def commutative_closed_form(
    model: SystemModel, y0: StateVector, u: ControlSignal, t: float
) -> StateVector:
    """S(t) exp(int_0^t u) y0 for scalar controls, valid because B = identity commutes with A."""
    if not model.is_scalar or u.kind is not ControlSpace.SCALAR:
        raise UnsupportedError("the commutative closed form needs a scalar control")
    k = u.tgrid.node_index(t)
    U = u.cumulative_integral()[k]
    return StateVector(model.grid, np.exp(U) * apply_semigroup(model, y0, u.tgrid, k).values)


# ---------------------------------------------------------------------------
# costs


def _check_cost_inputs(u: ControlSignal, y_traj: Trajectory) -> None:
    if u.tgrid != y_traj.tgrid:
        raise DimensionError("control and trajectory use different time grids")
    if u.grid is not None and u.grid != y_traj.grid:
        raise DimensionError("field control and trajectory use different spatial grids")


def cost_J(u: ControlSignal, y_traj: Trajectory, r: float) -> float:
    """int_0^T ||y||^2 dt + r/2 int_0^T ||u||_U^2 dt."""
    if not r > 0:
        raise ConfigurationError(f"r must be positive, got {r}")
    _check_cost_inputs(u, y_traj)
    tw = u.tgrid.weights
    return float(tw @ y_traj.sq_norms() + 0.5 * r * (tw @ u.pointwise_sq_norms()))


def endpoint_residual(y_traj: Trajectory, y_d: StateVector) -> float:
    """||y(T) - y_d||."""
    if y_traj.grid != y_d.grid:
        raise DimensionError("trajectory and target grids differ")
    d = y_traj.states[-1] - y_d.values
    return float(np.sqrt(y_d.grid.weights @ (d * d)))


def cost_Jeps(u: ControlSignal, y_traj: Trajectory, y_d: StateVector, eps: float, r: float) -> float:
    """||y(T) - y_d||^2 + eps * J(u)."""
    if not eps > 0:
        raise ConfigurationError(f"eps must be positive, got {eps}")
    return endpoint_residual(y_traj, y_d) ** 2 + eps * cost_J(u, y_traj, r)
