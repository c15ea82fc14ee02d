"""Scenario registry, config files, batch runs and on-disk artifacts.

Config files are TOML documents of flat ``key = value`` pairs, e.g.::

    scenario = "transport_fig1"
    mode = "constrained"
    n_stages = 8

Every key not given falls back to the scenario default.  Unknown keys are
rejected.  The ``custom`` scenario additionally reads ``generator``,
``control_space`` and numpy expressions ``y0`` (in ``x``), ``y_d`` (in
``x``) and ``reference_v`` (in ``t``, or ``t`` and ``x`` for field
controls).  Expressions are evaluated with Python's ``eval`` over a small
numpy namespace, so config files must be trusted.
"""

from __future__ import annotations

import enum
import io
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .continuation import ContinuationConfig, ContinuationReport, StageRecord, solve_constrained
from .dynamics import (
    ControlSignal,
    TimeGrid,
    Trajectory,
    apply_semigroup,
    cost_J,
    cost_Jeps,
    endpoint_residual,
    solve_adjoint,
    solve_forward,
)
from .errors import ConfigurationError
from .feedback import FeedbackConfig, solve_feedback
from .penalty import PenaltyConfig, hamiltonian_gradient, solve_penalized
from .spaces import ControlSpace, Generator, Grid, StateVector, SystemModel

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)


class Scenario(enum.Enum):
    TRANSPORT_FIG1 = "transport_fig1"
    HEAT_SCALAR = "heat_scalar"
    HEAT_DISTRIBUTED = "heat_distributed"
    CUSTOM = "custom"


class Mode(enum.Enum):
    PENALIZED = "penalized"
    CONSTRAINED = "constrained"
    FEEDBACK = "feedback"


class ConfigError(ConfigurationError):
    """Invalid config file or value; ``field`` / ``line`` locate the problem."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        super().__init__(message)
        self.field = field
        self.line = line


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: Scenario
    mode: Mode = Mode.CONSTRAINED
    x_min: float = 0.0
    x_max: float = 1.0
    dx: float = 0.01
    dt: float = 1e-3
    horizon_T: float = 1.0
    r: float = 2.0
    lam: float | None = None
    eps_start: float = 1.0
    decay_rho: float = 0.3
    n_stages: int = 12
    endpoint_tol: float = 1e-3
    max_iters: int = 500
    fixed_point_tol: float = 1e-8
    relaxation_omega: float = 0.5
    relaxation: str = "adaptive"
    ball_radius_M: float | None = None
    feedback_omega: float = 0.3
    feedback_tol: float = 1e-10
    feedback_max_iters: int = 500
    output_dir: str = "runs/out"
    seed: int = 0
    trajectory_time_stride: int = 0
    # custom scenario only
    generator: str | None = None
    control_space: str | None = None
    y0: str | None = None
    y_d: str | None = None
    reference_v: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scenario"] = self.scenario.value
        d["mode"] = self.mode.value
        return d


_FIELD_NAMES = {f.name for f in fields(ScenarioConfig)}
# "lambda" is a Python keyword, the config file spells it out
_KEY_ALIASES = {"lambda": "lam"}

SCENARIO_DEFAULTS: dict[Scenario, dict] = {
    Scenario.TRANSPORT_FIG1: dict(
        x_min=0.0, x_max=30.0, dx=0.01, dt=0.01, horizon_T=9.0, r=2.0,
    ),
    Scenario.HEAT_SCALAR: dict(
        x_min=0.0, x_max=1.0, dx=0.01, dt=1e-3, horizon_T=1.0, r=2.0, lam=2.0,
    ),
    Scenario.HEAT_DISTRIBUTED: dict(
        x_min=0.0, x_max=1.0, dx=0.01, dt=1e-3, horizon_T=0.1, r=2.0,
    ),
    Scenario.CUSTOM: dict(),
}

SCENARIO_DESCRIPTIONS = {
    Scenario.TRANSPORT_FIG1: "transport y_t = -y_x + u(t) y on (0,30), y0 = x e^-x, "
    "y_d = shift of y0 by T=9, r=2 (reference control v = 0)",
    Scenario.HEAT_SCALAR: "heat y_t = y_xx + u(t) y on (0,1), y0 = sin(pi x), "
    "y_d = lambda S(T) y0, v(t) = (lambda-1)/(T+(lambda-1)t)",
    Scenario.HEAT_DISTRIBUTED: "heat y_t = y_xx + u(t,x) y on (0,1), y0 = sin(pi x), "
    "y_d = y_v(T) for v(t,x) = 4x(1-x)",
    Scenario.CUSTOM: "user-defined generator, control space and expressions",
}

_EXPR_NAMESPACE = {
    name: getattr(np, name)
    for name in ("exp", "sin", "cos", "tan", "sinh", "cosh", "tanh", "sqrt", "log",
                 "abs", "where", "minimum", "maximum", "heaviside", "pi", "zeros_like",
                 "ones_like")
}


def _coerce(name: str, value, default):
    if name == "scenario":
        return _enum(Scenario, value, name)
    if name == "mode":
        return _enum(Mode, value, name)
    if isinstance(default, bool) or isinstance(value, bool):
        raise ConfigError(f"{name}: booleans are not accepted here", field=name)
    if name in ("n_stages", "max_iters", "feedback_max_iters", "seed", "trajectory_time_stride"):
        if not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer, got {value!r}", field=name)
        return value
    if name in ("relaxation", "output_dir", "generator", "control_space", "y0", "y_d",
                "reference_v"):
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string, got {value!r}", field=name)
        return value
    if not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}", field=name)
    return float(value)


def _enum(cls, value, name):
    if isinstance(value, cls):
        return value
    try:
        return cls(str(value).lower())
    except ValueError:
        choices = ", ".join(m.value for m in cls)
        raise ConfigError(f"{name} must be one of {choices}, got {value!r}", field=name) from None


def make_config(values: dict) -> ScenarioConfig:
    """Validated config from a flat mapping; scenario defaults fill the gaps."""
    values = {_KEY_ALIASES.get(k, k): v for k, v in values.items() if v is not None}
    unknown = sorted(set(values) - _FIELD_NAMES)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}", field=unknown[0])
    if "scenario" not in values:
        raise ConfigError("scenario is required", field="scenario")
    scenario = _enum(Scenario, values["scenario"], "scenario")
    merged = dict(SCENARIO_DEFAULTS[scenario])
    merged.update(values)
    defaults = {f.name: f.default for f in fields(ScenarioConfig)}
    kwargs = {k: _coerce(k, v, defaults.get(k)) for k, v in merged.items()}
    cfg = ScenarioConfig(**kwargs)
    validate_config(cfg)
    return cfg


def _positive(cfg, name):
    if not getattr(cfg, name) > 0:
        raise ConfigError(f"{name} must be positive, got {getattr(cfg, name)}", field=name)


def validate_config(cfg: ScenarioConfig) -> None:
    for name in ("dx", "dt", "horizon_T", "r", "eps_start", "endpoint_tol",
                 "fixed_point_tol", "feedback_tol", "max_iters", "n_stages",
                 "feedback_max_iters"):
        _positive(cfg, name)
    if not cfg.x_max > cfg.x_min:
        raise ConfigError("x_max must exceed x_min", field="x_max")
    if not 0 < cfg.decay_rho < 1:
        raise ConfigError("decay_rho must lie in (0, 1)", field="decay_rho")
    for name in ("relaxation_omega", "feedback_omega"):
        if not 0 < getattr(cfg, name) <= 1:
            raise ConfigError(f"{name} must lie in (0, 1]", field=name)
    if cfg.relaxation not in ("fixed", "adaptive"):
        raise ConfigError("relaxation must be 'fixed' or 'adaptive'", field="relaxation")
    if cfg.ball_radius_M is not None:
        _positive(cfg, "ball_radius_M")
    if cfg.trajectory_time_stride < 0:
        raise ConfigError("trajectory_time_stride must be >= 0", field="trajectory_time_stride")
    if cfg.scenario is Scenario.HEAT_SCALAR and not (cfg.lam is not None and cfg.lam > 1):
        raise ConfigError("heat_scalar needs lambda > 1", field="lambda")

    generator, control_space = _model_kinds(cfg)
    if generator is Generator.TRANSPORT_RIGHT_SHIFT and abs(cfg.dt - cfg.dx) > 1e-12 * cfg.dx:
        raise ConfigError(
            f"transport uses exact-shift stepping, which requires dt == dx "
            f"(got dt={cfg.dt}, dx={cfg.dx})",
            field="dt",
        )
    if cfg.mode is Mode.FEEDBACK and control_space is not ControlSpace.SCALAR:
        raise ConfigError("feedback mode needs a scalar control", field="mode")
    if cfg.scenario is Scenario.CUSTOM and cfg.y0 is None:
        raise ConfigError("custom scenario needs y0", field="y0")
    if cfg.scenario is Scenario.CUSTOM and cfg.y_d is None and cfg.reference_v is None:
        raise ConfigError("custom scenario needs y_d or reference_v", field="y_d")
    try:
        Grid.from_spacing(cfg.x_min, cfg.x_max, cfg.dx)
    except ConfigurationError as exc:
        raise ConfigError(str(exc), field="dx") from None
    try:
        TimeGrid.from_step(cfg.horizon_T, cfg.dt)
    except ConfigurationError as exc:
        raise ConfigError(str(exc), field="dt") from None


def _model_kinds(cfg: ScenarioConfig) -> tuple[Generator, ControlSpace]:
    if cfg.scenario is Scenario.TRANSPORT_FIG1:
        return Generator.TRANSPORT_RIGHT_SHIFT, ControlSpace.SCALAR
    if cfg.scenario is Scenario.HEAT_SCALAR:
        return Generator.HEAT_DIRICHLET, ControlSpace.SCALAR
    if cfg.scenario is Scenario.HEAT_DISTRIBUTED:
        return Generator.HEAT_DIRICHLET, ControlSpace.DISTRIBUTED
    if cfg.generator is None or cfg.control_space is None:
        raise ConfigError("custom scenario needs generator and control_space", field="generator")
    return _enum(Generator, cfg.generator, "generator"), _enum(
        ControlSpace, cfg.control_space, "control_space"
    )


def load_config(path, **overrides) -> ScenarioConfig:
    """Read a TOML config file; non-None ``overrides`` win over file values."""
    path = Path(path)
    text = path.read_text()
    try:
        values = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"{path}: {exc}", line=line) from None
    nested = [k for k, v in values.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"{path}: tables are not supported ({nested[0]})", field=nested[0])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return make_config(values)


# ---------------------------------------------------------------------------
# problem construction


@dataclass(frozen=True, eq=False)
class Problem:
    model: SystemModel
    tgrid: TimeGrid
    y0: StateVector
    y_d: StateVector
    reference_v: ControlSignal | None


def _eval_expr(expr: str, **variables):
    ns = dict(_EXPR_NAMESPACE)
    ns.update(variables)
    try:
        return eval(expr, {"__builtins__": {}}, ns)  # noqa: S307 - trusted config
    except Exception as exc:
        raise ConfigError(f"cannot evaluate expression {expr!r}: {exc}") from None


def build_problem(cfg: ScenarioConfig) -> Problem:
    generator, control_space = _model_kinds(cfg)
    grid = Grid.from_spacing(cfg.x_min, cfg.x_max, cfg.dx)
    tgrid = TimeGrid.from_step(cfg.horizon_T, cfg.dt)
    model = SystemModel(generator, control_space, grid)
    x = grid.nodes
    T = cfg.horizon_T

    if cfg.scenario is Scenario.TRANSPORT_FIG1:
        y0 = StateVector(grid, x * np.exp(-x))
        shifted = np.where(x >= T, (x - T) * np.exp(np.minimum(T - x, 0.0)), 0.0)
        return Problem(model, tgrid, y0, StateVector(grid, shifted), ControlSignal.zeros(model, tgrid))

    if cfg.scenario is Scenario.HEAT_SCALAR:
        lam = cfg.lam
        y0 = StateVector(grid, _dirichlet(np.sin(np.pi * x)))
        y_d = StateVector(grid, lam * apply_semigroup(model, y0, tgrid).values)
        v = ControlSignal.from_function(model, tgrid, lambda t: (lam - 1) / (T + (lam - 1) * t))
        return Problem(model, tgrid, y0, y_d, v)

    if cfg.scenario is Scenario.HEAT_DISTRIBUTED:
        y0 = StateVector(grid, _dirichlet(np.sin(np.pi * x)))
        v = ControlSignal.from_function(model, tgrid, lambda t, xx: 4.0 * xx * (1.0 - xx) + 0.0 * t)
        y_d = solve_forward(model, y0, v, tgrid).final
        return Problem(model, tgrid, y0, y_d, v)

    y0_vals = np.broadcast_to(_eval_expr(cfg.y0, x=x), x.shape).astype(float)
    if generator is Generator.HEAT_DIRICHLET:
        y0_vals = _dirichlet(y0_vals.copy())
    else:
        y0_vals = y0_vals.copy()
        y0_vals[0] = 0.0
    y0 = StateVector(grid, y0_vals)
    v = None
    if cfg.reference_v is not None:
        if model.is_scalar:
            v = ControlSignal.from_function(model, tgrid, lambda t: _eval_expr(cfg.reference_v, t=t))
        else:
            v = ControlSignal.from_function(
                model, tgrid, lambda t, xx: _eval_expr(cfg.reference_v, t=t, x=xx)
            )
    if cfg.y_d is not None:
        y_d = StateVector(grid, np.broadcast_to(_eval_expr(cfg.y_d, x=x), x.shape))
    else:
        y_d = solve_forward(model, y0, v, tgrid).final
    return Problem(model, tgrid, y0, y_d, v)


def _dirichlet(values: np.ndarray) -> np.ndarray:
    values[0] = values[-1] = 0.0
    return values


def penalty_config(cfg: ScenarioConfig, eps: float | None = None) -> PenaltyConfig:
    return PenaltyConfig(
        eps=cfg.eps_start if eps is None else eps,
        r=cfg.r,
        ball_radius_M=cfg.ball_radius_M,
        max_iters=cfg.max_iters,
        fixed_point_tol=cfg.fixed_point_tol,
        relaxation_omega=cfg.relaxation_omega,
        relaxation=cfg.relaxation,
    )


def continuation_config(cfg: ScenarioConfig) -> ContinuationConfig:
    return ContinuationConfig(
        inner=penalty_config(cfg),
        eps_start=cfg.eps_start,
        decay_rho=cfg.decay_rho,
        n_stages=cfg.n_stages,
        endpoint_tol=cfg.endpoint_tol,
    )


# ---------------------------------------------------------------------------
# running and artifacts


@dataclass
class RunArtifacts:
    control_csv: Path
    trajectory_csv: Path
    target_csv: Path
    report_json: Path
    report: dict
    summary: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return bool(self.report["converged"])


def gradient_check(problem: Problem, u: ControlSignal, eps: float, r: float, seed: int,
                   h: float = 1e-5) -> dict:
    """Compare <H'(u), du> with a central difference of J_eps along a seeded random du."""
    rng = np.random.default_rng(seed)
    du = u.with_values(rng.standard_normal(u.values.shape))
    m, y0, y_d, tg = problem.model, problem.y0, problem.y_d, problem.tgrid
    y = solve_forward(m, y0, u, tg)
    phi = solve_adjoint(m, u, y, y_d, eps, tg)
    analytic = hamiltonian_gradient(u, y, phi, eps, r).l2_inner(du)

    def jeps(s):
        us = u.with_values(u.values + s * du.values)
        return cost_Jeps(us, solve_forward(m, y0, us, tg), y_d, eps, r)

    fd = (jeps(h) - jeps(-h)) / (2 * h)
    rel = abs(analytic - fd) / max(abs(fd), 1e-300)
    return {"seed": seed, "h": h, "eps": eps, "directional_derivative": analytic,
            "finite_difference": fd, "relative_error": rel}


def _stage_from_solve(eps: float, rep, change: float) -> StageRecord:
    return StageRecord(eps=eps, endpoint_gap=rep.endpoint_gap, J_value=rep.J_value,
                       Jeps_value=rep.Jeps_value, control_l2_norm=rep.control_l2_norm,
                       inner_iterations=rep.iterations, converged=rep.converged,
                       control_change=change)


def solve_scenario(cfg: ScenarioConfig, problem: Problem | None = None):
    """Run the configured mode; returns ``(problem, u, y_traj, report_dict)``."""
    problem = problem or build_problem(cfg)
    m, y0, y_d, tg, v = problem.model, problem.y0, problem.y_d, problem.tgrid, problem.reference_v
    report: dict = {"scenario": cfg.scenario.value, "mode": cfg.mode.value, "config": cfg.to_dict()}

    if cfg.mode is Mode.PENALIZED:
        u0 = ControlSignal.zeros(m, tg)
        u, y, rep = solve_penalized(m, y0, y_d, penalty_config(cfg), u0)
        threshold = cfg.endpoint_tol * (y_d.norm() if y_d.norm() > 0 else 1.0)
        cont = ContinuationReport(
            stages=[_stage_from_solve(cfg.eps_start, rep, u.l2_norm())],
            final_stage_index=0,
            attained=rep.endpoint_gap <= threshold,
            endpoint_threshold=threshold,
            warnings=list(rep.warnings),
        )
        report["continuation"] = cont.to_dict()
        report["residual_history"] = rep.residual_history
        report["converged"] = rep.converged
        final_eps = cfg.eps_start
    elif cfg.mode is Mode.CONSTRAINED:
        u, cont = solve_constrained(m, y0, y_d, continuation_config(cfg), tg)
        y = solve_forward(m, y0, u, tg)
        report["continuation"] = cont.to_dict()
        report["converged"] = bool(cont.attained and cont.final.converged)
        final_eps = cont.final.eps
    else:
        if v is None:
            raise ConfigError("feedback mode needs a reference control", field="reference_v")
        fcfg = FeedbackConfig(reference_v=v, r=cfg.r, max_outer_iters=cfg.feedback_max_iters,
                              tol=cfg.feedback_tol, relaxation_omega=cfg.feedback_omega,
                              admissibility_tol=cfg.endpoint_tol)
        u, y, rep = solve_feedback(m, y0, fcfg, y_d)
        report["feedback"] = {k: val for k, val in rep.to_dict().items() if k != "Jeps_value"}
        report["converged"] = rep.converged
        final_eps = None

    costs = {"J_u": cost_J(u, y, cfg.r), "endpoint_gap": endpoint_residual(y, y_d),
             "target_norm": y_d.norm()}
    if v is not None:
        J_v = cost_J(v, solve_forward(m, y0, v, tg), cfg.r)
        costs["J_v"] = J_v
        costs["ratio_Jv_over_Ju"] = J_v / costs["J_u"] if costs["J_u"] > 0 else math.inf
    if m.is_scalar:
        costs["control_integral"] = float(u.integral())
        if v is not None:
            costs["reference_integral"] = float(v.integral())
    report["costs"] = costs
    if final_eps is not None:
        report["gradient_check"] = gradient_check(problem, u, final_eps, cfg.r, cfg.seed)
    return problem, u, y, report


def _fmt(a) -> str:
    return repr(float(a))


def write_csv(path: Path, header: list[str], columns: list[np.ndarray]) -> None:
    cols = [np.asarray(c, dtype=float).ravel() for c in columns]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(map(_fmt, row)) + "\n")


def read_csv(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        body = fh.read()
    if not body.strip():
        return header, np.empty((0, len(header)))
    data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
    return header, data


def _time_stride(cfg: ScenarioConfig, n_steps: int) -> int:
    if cfg.trajectory_time_stride > 0:
        return cfg.trajectory_time_stride
    return max(1, math.ceil(n_steps / 100))


def write_artifacts(cfg: ScenarioConfig, problem: Problem, u: ControlSignal, y: Trajectory,
                    report: dict) -> RunArtifacts:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tg, grid = problem.tgrid, problem.model.grid
    t, x = tg.times, grid.nodes

    control_csv = out / "control.csv"
    if u.grid is None:
        write_csv(control_csv, ["t", "u"], [t, u.values])
    else:
        tt, xx = np.meshgrid(t, x, indexing="ij")
        write_csv(control_csv, ["t", "x", "u"], [tt, xx, u.values])

    idx = np.arange(0, tg.n_nodes, _time_stride(cfg, tg.n_steps))
    if idx[-1] != tg.n_steps:
        idx = np.append(idx, tg.n_steps)
    tt, xx = np.meshgrid(t[idx], x, indexing="ij")
    trajectory_csv = out / "trajectory.csv"
    write_csv(trajectory_csv, ["t", "x", "y"], [tt, xx, y.states[idx]])

    target_csv = out / "target.csv"
    write_csv(target_csv, ["x", "y_d"], [x, problem.y_d.values])

    report_json = out / "report.json"
    report_json.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return RunArtifacts(control_csv, trajectory_csv, target_csv, report_json, report)


def load_report(path) -> dict:
    return json.loads(Path(path).read_text())


def run_scenario(cfg: ScenarioConfig) -> RunArtifacts:
    start = time.perf_counter()
    problem, u, y, report = solve_scenario(cfg)
    artifacts = write_artifacts(cfg, problem, u, y, report)
    costs = report["costs"]
    summary = {
        "scenario": cfg.scenario.value,
        "mode": cfg.mode.value,
        "converged": report["converged"],
        "J_u": costs["J_u"],
        "endpoint_gap": costs["endpoint_gap"],
        "wall_time": time.perf_counter() - start,
    }
    for key in ("J_v", "ratio_Jv_over_Ju", "control_integral", "reference_integral"):
        if key in costs:
            summary[key] = costs[key]
    if "continuation" in report:
        summary["stages"] = [
            {"eps": s["eps"], "J": s["J_value"], "J_eps": s["Jeps_value"],
             "endpoint_gap": s["endpoint_gap"]}
            for s in report["continuation"]["stages"]
        ]
    artifacts.summary = summary
    return artifacts


def emit_plot_data(artifacts: RunArtifacts, path=None) -> Path:
    """Write ``x, y_T, y_d`` (final state against target) next to the run artifacts."""
    traj = Path(artifacts.trajectory_csv)
    target = Path(artifacts.target_csv)
    for p in (traj, target):
        if not p.exists():
            raise FileNotFoundError(p)
    _, data = read_csv(traj)
    if data.size == 0:
        raise ValueError(f"{traj} holds no trajectory rows")
    _, tgt = read_csv(target)
    t_final = data[:, 0].max()
    final = data[data[:, 0] == t_final]
    if final.shape[0] != tgt.shape[0] or not np.array_equal(final[:, 1], tgt[:, 0]):
        raise ValueError("trajectory and target files use different spatial grids")
    path = Path(path) if path is not None else traj.with_name("overlay.csv")
    write_csv(path, ["x", "y_T", "y_d"], [final[:, 1], final[:, 2], tgt[:, 1]])
    return path


def with_overrides(cfg: ScenarioConfig, **changes) -> ScenarioConfig:
    """Copy of ``cfg`` with validated changes."""
    new = replace(cfg, **changes)
    validate_config(new)
    return new
