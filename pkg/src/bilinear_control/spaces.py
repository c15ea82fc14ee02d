"""Discrete state/control spaces and the multiplicative bilinear operator.

States live on a uniform 1D grid and use the composite trapezoid rule as
their inner product.  Controls are either scalars (U = R) or fields on the
same grid (U = L2(Omega), with the same trapezoid inner product as states).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigurationError, DimensionError


class Generator(enum.Enum):
    TRANSPORT_RIGHT_SHIFT = "transport"
    HEAT_DIRICHLET = "heat"


class ControlSpace(enum.Enum):
    SCALAR = "scalar"
    DISTRIBUTED = "distributed"


@dataclass(frozen=True)
class Grid:
    """Uniform grid with nodes ``x_min + i*dx`` for ``i = 0..n_cells``."""

    x_min: float
    x_max: float
    n_cells: int

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < 2:
            raise ConfigurationError(f"n_cells must be an integer >= 2, got {self.n_cells}")
        if not self.x_max > self.x_min:
            raise ConfigurationError("x_max must exceed x_min")
        object.__setattr__(self, "n_cells", int(self.n_cells))
        object.__setattr__(self, "x_min", float(self.x_min))
        object.__setattr__(self, "x_max", float(self.x_max))

    @classmethod
    def from_spacing(cls, x_min: float, x_max: float, dx: float) -> "Grid":
        n = round((x_max - x_min) / dx)
        if n < 2 or abs(n * dx - (x_max - x_min)) > 1e-9 * max(1.0, abs(x_max - x_min)):
            raise ConfigurationError(
                f"dx={dx} does not divide the interval [{x_min}, {x_max}] into whole cells"
            )
        return cls(x_min, x_max, n)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_cells

    @property
    def n_nodes(self) -> int:
        return self.n_cells + 1

    @cached_property
    def nodes(self) -> np.ndarray:
        x = self.x_min + self.dx * np.arange(self.n_nodes)
        x.setflags(write=False)
        return x

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights."""
        w = np.full(self.n_nodes, self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        w.setflags(write=False)
        return w


def _check_values(grid: Grid, values, what: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.shape != (grid.n_nodes,):
        raise DimensionError(f"{what} has shape {arr.shape}, expected ({grid.n_nodes},)")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StateVector:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _check_values(self.grid, self.values, "state"))

    @classmethod
    def from_function(cls, grid: Grid, func) -> "StateVector":
        return cls(grid, func(grid.nodes))

    @classmethod
    def zeros(cls, grid: Grid) -> "StateVector":
        return cls(grid, np.zeros(grid.n_nodes))

    def norm(self) -> float:
        return float(np.sqrt(inner(self, self)))


@dataclass(frozen=True, eq=False)
class ControlValue:
    """A single control value: a real number or a field on the state grid."""

    kind: ControlSpace
    value: float | np.ndarray
    grid: Grid | None = field(default=None)

    def __post_init__(self):
        if self.kind is ControlSpace.SCALAR:
            v = float(self.value)
            if not np.isfinite(v):
                raise ValueError("scalar control must be finite")
            object.__setattr__(self, "value", v)
        else:
            if self.grid is None:
                raise ConfigurationError("a field control needs its grid")
            object.__setattr__(self, "value", _check_values(self.grid, self.value, "field control"))

    @classmethod
    def scalar(cls, c: float) -> "ControlValue":
        return cls(ControlSpace.SCALAR, c)

    @classmethod
    def field(cls, grid: Grid, values) -> "ControlValue":
        return cls(ControlSpace.DISTRIBUTED, values, grid)

    def inner(self, other: "ControlValue") -> float:
        if self.kind is not other.kind:
            raise ConfigurationError("cannot pair scalar and field controls")
        if self.kind is ControlSpace.SCALAR:
            return self.value * other.value
        _same_grid(self.grid, other.grid)
        return float(np.dot(self.grid.weights, self.value * other.value))


def _same_grid(a: Grid, b: Grid) -> None:
    if a != b:
        raise DimensionError(f"grid mismatch: {a} vs {b}")


def inner(a: StateVector, b: StateVector) -> float:
    """Trapezoid approximation of the L2 inner product of two grid functions."""
    _same_grid(a.grid, b.grid)
    return float(np.dot(a.grid.weights, a.values * b.values))


def norm(a: StateVector) -> float:
    return a.norm()


class MultiplicationOperator:
    """The bilinear operator B(u, y) = u*y.

    For a scalar control this is scalar multiplication; for a field control
    it is the pointwise product x -> u(x) y(x).  In the state slot the
    operator is self-adjoint, and its adjoint in the control slot is
    ``p -> <y, p>`` (scalar) or ``p -> y*p`` (field).
    """

    def __init__(self, control_space: ControlSpace):
        self.control_space = ControlSpace(control_space)

    def __repr__(self):
        return f"MultiplicationOperator({self.control_space.value})"

    def _check_kind(self, u: ControlValue) -> None:
        if u.kind is not self.control_space:
            raise ConfigurationError(
                f"{u.kind.value} control passed to a {self.control_space.value}-control model"
            )

    def _factor(self, u: ControlValue, y: StateVector):
        self._check_kind(u)
        if u.kind is ControlSpace.DISTRIBUTED:
            _same_grid(u.grid, y.grid)
        return u.value

    def apply(self, u: ControlValue, y: StateVector) -> StateVector:
        return StateVector(y.grid, self._factor(u, y) * y.values)

    def adjoint_state(self, u: ControlValue, p: StateVector) -> StateVector:
        return StateVector(p.grid, self._factor(u, p) * p.values)

    def adjoint_control(self, y: StateVector, p: StateVector) -> ControlValue:
        _same_grid(y.grid, p.grid)
        if self.control_space is ControlSpace.SCALAR:
            return ControlValue.scalar(inner(y, p))
        return ControlValue.field(y.grid, y.values * p.values)


@dataclass(frozen=True)
class SystemModel:
    """Generator of the free dynamics, control space and spatial grid.

    Both generators impose homogeneous boundary values: the transport model
    has zero inflow at ``x_min``; the heat model has zero Dirichlet data at
    both ends.
    """

    generator: Generator
    control_space: ControlSpace
    grid: Grid

    def __post_init__(self):
        object.__setattr__(self, "generator", Generator(self.generator))
        object.__setattr__(self, "control_space", ControlSpace(self.control_space))

    @property
    def B(self) -> MultiplicationOperator:
        return MultiplicationOperator(self.control_space)

    @property
    def is_scalar(self) -> bool:
        return self.control_space is ControlSpace.SCALAR

    @cached_property
    def boundary_nodes(self) -> tuple[int, ...]:
        if self.generator is Generator.TRANSPORT_RIGHT_SHIFT:
            return (0,)
        return (0, self.grid.n_cells)

    def check_boundary(self, y: StateVector, atol: float = 0.0) -> None:
        _same_grid(y.grid, self.grid)
        for i in self.boundary_nodes:
            if abs(y.values[i]) > atol:
                raise ConfigurationError(
                    f"state violates the homogeneous boundary condition at node {i} "
                    f"(value {y.values[i]:.3e})"
                )
