"""Endpoint-constrained problem as the limit of penalized problems.

A decreasing sequence ``eps_k = eps_start * rho**k`` is run through
:func:`solve_penalized`, each stage warm-started from the previous control,
until the endpoint gap drops below the requested tolerance.  The control of
the last stage stands in for the (weak) limit of the penalized optima.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dynamics import ControlSignal, TimeGrid, endpoint_residual, solve_forward
from .penalty import PenaltyConfig, solve_penalized
from .errors import ConfigurationError
from .spaces import StateVector, SystemModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContinuationConfig:
    """Geometric eps schedule around a penalized-solve template.

    ``endpoint_tol`` is relative to ``||y_d||`` (absolute when ``y_d = 0``).
    The ``eps`` of ``inner`` is ignored.
    """

    inner: PenaltyConfig
    eps_start: float = 1.0
    decay_rho: float = 0.3
    n_stages: int = 12
    endpoint_tol: float = 1e-3

    def __post_init__(self):
        if not self.eps_start > 0:
            raise ConfigurationError(f"eps_start must be positive, got {self.eps_start}")
        if not 0 < self.decay_rho < 1:
            raise ConfigurationError(f"decay_rho must lie in (0, 1), got {self.decay_rho}")
        if int(self.n_stages) != self.n_stages or self.n_stages < 1:
            raise ConfigurationError("n_stages must be a positive integer")
        if not self.endpoint_tol > 0:
            raise ConfigurationError("endpoint_tol must be positive")

    def schedule(self) -> list[float]:
        return [self.eps_start * self.decay_rho**k for k in range(self.n_stages)]


@dataclass
class StageRecord:
    eps: float
    endpoint_gap: float
    J_value: float
    Jeps_value: float
    control_l2_norm: float
    inner_iterations: int
    converged: bool
    control_change: float


@dataclass
class ContinuationReport:
    stages: list[StageRecord] = field(default_factory=list)
    final_stage_index: int = -1
    attained: bool = False
    stagnated: bool = False
    endpoint_threshold: float = float("nan")
    warnings: list[str] = field(default_factory=list)

    @property
    def final(self) -> StageRecord:
        return self.stages[self.final_stage_index]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ContinuationReport":
        d = dict(d)
        d["stages"] = [StageRecord(**s) for s in d["stages"]]
        return cls(**d)


def check_admissible(
    model: SystemModel, y0: StateVector, v: ControlSignal, y_d: StateVector, tol: float
) -> bool:
    """True when the trajectory of ``v`` ends within ``tol * (1 + ||y_d||)`` of ``y_d``."""
    y = solve_forward(model, y0, v, v.tgrid)
    return endpoint_residual(y, y_d) <= tol * (1.0 + y_d.norm())


def solve_constrained(
    model: SystemModel,
    y0: StateVector,
    y_d: StateVector,
    config: ContinuationConfig,
    tgrid: TimeGrid | None = None,
    u_init: ControlSignal | None = None,
) -> tuple[ControlSignal, ContinuationReport]:
    if u_init is None:
        if tgrid is None:
            raise ConfigurationError("pass either tgrid or u_init")
        u_init = ControlSignal.zeros(model, tgrid)
    target_norm = y_d.norm()
    threshold = config.endpoint_tol * (target_norm if target_norm > 0 else 1.0)
    report = ContinuationReport(endpoint_threshold=threshold)

    u = u_init
    for k, eps in enumerate(config.schedule()):
        u_prev = u
        u, _, rep = solve_penalized(model, y0, y_d, replace(config.inner, eps=eps), u)
        report.stages.append(
            StageRecord(
                eps=eps,
                endpoint_gap=rep.endpoint_gap,
                J_value=rep.J_value,
                Jeps_value=rep.Jeps_value,
                control_l2_norm=rep.control_l2_norm,
                inner_iterations=rep.iterations,
                converged=rep.converged,
                control_change=u.with_values(u.values - u_prev.values).l2_norm(),
            )
        )
        report.final_stage_index = k
        log.info("stage %d eps=%.3e gap=%.3e J=%.6f sweeps=%d", k, eps,
                 rep.endpoint_gap, rep.J_value, rep.iterations)
        if k > 0:
            before = report.stages[k - 1].endpoint_gap
            if rep.endpoint_gap > before + threshold:
                report.warnings.append(
                    f"endpoint gap grew from {before:.3e} to {rep.endpoint_gap:.3e} at stage {k}"
                )
        if rep.endpoint_gap <= threshold:
            report.attained = True
            break

    if not report.attained:
        gaps = np.array([s.endpoint_gap for s in report.stages])
        tail = gaps[-3:]
        flat = tail.size >= 2 and tail[-1] > 0.9 * tail[0]
        report.stagnated = bool(gaps[-1] > 10 * threshold and (
            flat or not any(s.converged for s in report.stages)))
        if report.stagnated:
            report.warnings.append(
                "endpoint gap stagnated; the target may not be attainable from V"
            )
    return u, report
