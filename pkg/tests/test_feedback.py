import numpy as np
import pytest

from bilinear_control import (
    ConfigurationError,
    ControlSignal,
    FeedbackConfig,
    Grid,
    PreconditionError,
    StateVector,
    TimeGrid,
    Trajectory,
    UnsupportedError,
    feedback_formula,
    kernel_check,
    solve_feedback,
    solve_forward,
)
from bilinear_control.feedback import energy_tail
from conftest import reference_control


def test_kernel_check_examples(transport_model, transport_y0, heat_scalar, heat_y0, heat_field):
    assert kernel_check(transport_model, transport_y0, 9.0)
    assert not kernel_check(transport_model, StateVector.zeros(transport_model.grid), 9.0)
    assert kernel_check(heat_scalar, heat_y0, 1.0)
    with pytest.raises(UnsupportedError):
        kernel_check(heat_field, heat_y0, 1.0)


def test_energy_tail_constant_energy():
    g = Grid(0.0, 1.0, 10)
    tg = TimeGrid(2.0, 20)
    traj = Trajectory(tg, g, np.ones((tg.n_nodes, g.n_nodes)))
    np.testing.assert_allclose(energy_tail(traj), 2.0 - tg.times, atol=1e-14)


def test_formula_terminal_value_and_zero(transport_model, transport_y0, transport_tgrid):
    tg = transport_tgrid
    v = ControlSignal.zeros(transport_model, tg)
    zero_traj = Trajectory(tg, transport_model.grid, np.zeros((tg.n_nodes, transport_model.grid.n_nodes)))
    np.testing.assert_array_equal(feedback_formula(zero_traj, v, 2.0, 9.0).values, 0.0)

    y = solve_forward(transport_model, transport_y0, v, tg)
    u = feedback_formula(y, v, 2.0, 9.0)
    G = energy_tail(y)
    double = tg.weights @ G
    assert u.values[-1] == pytest.approx(2.0 / (9.0 * 2.0) * double, rel=1e-14)
    # r = 2, v = 0 specialisation: (1/T) double - G(t)
    np.testing.assert_allclose(u.values, double / 9.0 - G, rtol=1e-14, atol=1e-15)


def test_formula_rejects_distributed(heat_field, heat_y0):
    tg = TimeGrid(0.1, 100)
    v = ControlSignal.zeros(heat_field, tg)
    y = solve_forward(heat_field, heat_y0, v, tg)
    with pytest.raises(UnsupportedError):
        feedback_formula(y, v, 2.0, 0.1)


def test_config_validation(heat_scalar, heat_field):
    tg = TimeGrid(1.0, 100)
    with pytest.raises(ConfigurationError):
        FeedbackConfig(ControlSignal.zeros(heat_scalar, tg), r=0.0)
    with pytest.raises(UnsupportedError):
        FeedbackConfig(ControlSignal.zeros(heat_field, tg), r=2.0)


def test_precondition_errors(transport_model, transport_y0, transport_yd, transport_tgrid):
    v = ControlSignal.zeros(transport_model, transport_tgrid)
    zero = StateVector.zeros(transport_model.grid)
    with pytest.raises(PreconditionError, match="Ker"):
        solve_feedback(transport_model, zero, FeedbackConfig(v, 2.0))
    with pytest.raises(PreconditionError):
        solve_feedback(transport_model, transport_y0, FeedbackConfig(v, 2.0), y_d=zero)


def test_transport_feedback(transport_model, transport_y0, transport_yd, transport_tgrid):
    v = ControlSignal.zeros(transport_model, transport_tgrid)
    u, y, rep = solve_feedback(transport_model, transport_y0, FeedbackConfig(v, 2.0), transport_yd)
    assert rep.converged
    assert abs(u.integral()) <= 1e-3
    assert rep.endpoint_gap <= 1e-2 * transport_yd.norm()
    assert 1.12 <= rep.J_value <= 1.37
    # self-consistency
    np.testing.assert_allclose(feedback_formula(y, v, 2.0, 9.0).values, u.values, atol=1e-8)


def test_heat_feedback_mean_is_log_two(heat_scalar, heat_y0):
    tg = TimeGrid(1.0, 1000)
    v = reference_control(heat_scalar, tg)
    u, _, rep = solve_feedback(heat_scalar, heat_y0, FeedbackConfig(v, 2.0))
    assert rep.converged
    assert u.integral() == pytest.approx(np.log(2.0), abs=1e-3)


def test_small_horizon_tracks_constant_reference(heat_scalar, heat_y0):
    tg = TimeGrid(1e-3, 10)
    v = ControlSignal.from_function(heat_scalar, tg, lambda t: 0.7 + 0 * t)
    u, _, rep = solve_feedback(heat_scalar, heat_y0, FeedbackConfig(v, 2.0))
    np.testing.assert_allclose(u.values, 0.7, atol=1e-3)


def test_non_convergence_reported(heat_scalar, heat_y0):
    tg = TimeGrid(1.0, 1000)
    v = reference_control(heat_scalar, tg)
    _, _, rep = solve_feedback(heat_scalar, heat_y0, FeedbackConfig(v, 2.0, max_outer_iters=2))
    assert not rep.converged and rep.iterations == 2
