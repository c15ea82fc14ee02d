import numpy as np
import pytest

from bilinear_control import (
    ConfigurationError,
    ContinuationConfig,
    ContinuationReport,
    ControlSignal,
    PenaltyConfig,
    StageRecord,
    StateVector,
    TimeGrid,
    check_admissible,
    cost_J,
    solve_constrained,
    solve_forward,
    solve_penalized,
)
from conftest import reference_control


def test_schedule_geometric():
    cfg = ContinuationConfig(PenaltyConfig(eps=1.0, r=2.0), eps_start=1.0, decay_rho=0.1, n_stages=5)
    np.testing.assert_allclose(cfg.schedule(), [1.0, 0.1, 0.01, 1e-3, 1e-4])


@pytest.mark.parametrize("kw", [dict(eps_start=0.0), dict(decay_rho=1.0), dict(n_stages=0),
                                dict(endpoint_tol=-1.0)])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        ContinuationConfig(PenaltyConfig(eps=1.0, r=2.0), **kw)


def test_check_admissible_transport(transport_model, transport_y0, transport_yd, transport_tgrid):
    zero = ControlSignal.zeros(transport_model, transport_tgrid)
    one = ControlSignal.from_function(transport_model, transport_tgrid, lambda t: 1.0 + 0 * t)
    assert check_admissible(transport_model, transport_y0, zero, transport_yd, 1e-8)
    assert not check_admissible(transport_model, transport_y0, one, transport_yd, 1e-3)


def test_check_admissible_self_consistent(heat_field, heat_y0):
    tg = TimeGrid(0.1, 100)
    v = ControlSignal.from_function(heat_field, tg, lambda t, x: np.sin(3 * t) * x)
    y_d = solve_forward(heat_field, heat_y0, v, tg).final
    assert check_admissible(heat_field, heat_y0, v, y_d, 1e-12)


def test_constrained_beats_known_admissible(heat_scalar, heat_y0):
    tg = TimeGrid(0.1, 100)
    v = reference_control(heat_scalar, tg)
    y_d = solve_forward(heat_scalar, heat_y0, v, tg).final
    cfg = ContinuationConfig(PenaltyConfig(eps=1.0, r=2.0, max_iters=2000), eps_start=1.0,
                             decay_rho=0.1, n_stages=6, endpoint_tol=1e-3)
    u, rep = solve_constrained(heat_scalar, heat_y0, y_d, cfg, tgrid=tg)
    assert rep.attained
    assert rep.final.endpoint_gap <= rep.endpoint_threshold
    J_v = cost_J(v, solve_forward(heat_scalar, heat_y0, v, tg), 2.0)
    assert rep.final.J_value <= J_v + 1e-3
    assert len(rep.stages) == rep.final_stage_index + 1
    for s in rep.stages:
        if s.converged:
            assert s.J_value <= J_v + 1e-3


def test_single_huge_eps_stage_is_penalized_solve(heat_scalar, heat_y0):
    tg = TimeGrid(0.1, 100)
    y_d = solve_forward(heat_scalar, heat_y0, reference_control(heat_scalar, tg), tg).final
    inner_cfg = PenaltyConfig(eps=1e6, r=2.0)
    u, rep = solve_constrained(heat_scalar, heat_y0, y_d,
                               ContinuationConfig(inner_cfg, eps_start=1e6, n_stages=1), tgrid=tg)
    u2, _, rep2 = solve_penalized(heat_scalar, heat_y0, y_d, inner_cfg,
                                  ControlSignal.zeros(heat_scalar, tg))
    assert len(rep.stages) == 1
    np.testing.assert_array_equal(u.values, u2.values)
    assert rep.final.J_value == rep2.J_value


def test_unattainable_target_flags_stagnation(transport_model, transport_y0, transport_grid):
    # mass on the inflow side of the domain cannot be produced by a shift
    tg = TimeGrid.from_step(2.0, 0.01)
    y_d = StateVector.from_function(transport_grid, lambda x: np.exp(-((x - 0.5) ** 2) * 20))
    cfg = ContinuationConfig(PenaltyConfig(eps=1.0, r=2.0, max_iters=50), eps_start=1.0,
                             decay_rho=0.1, n_stages=4, endpoint_tol=1e-3)
    _, rep = solve_constrained(transport_model, transport_y0, y_d, cfg, tgrid=tg)
    assert not rep.attained
    assert rep.stagnated
    assert any("stagnated" in w for w in rep.warnings)


def test_needs_grid_or_initial_control(heat_scalar, heat_y0):
    cfg = ContinuationConfig(PenaltyConfig(eps=1.0, r=2.0))
    with pytest.raises(ConfigurationError):
        solve_constrained(heat_scalar, heat_y0, heat_y0, cfg)


def test_report_round_trip():
    rep = ContinuationReport(
        stages=[StageRecord(1.0, 0.1, 1.2, 0.3, 0.4, 7, True, 0.5)],
        final_stage_index=0, attained=True, stagnated=False, endpoint_threshold=1e-3,
        warnings=["x"],
    )
    assert ContinuationReport.from_dict(rep.to_dict()) == rep
