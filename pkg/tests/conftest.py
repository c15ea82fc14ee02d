import numpy as np
import pytest

from bilinear_control import (
    ControlSignal,
    ControlSpace,
    Generator,
    Grid,
    StateVector,
    SystemModel,
    TimeGrid,
    apply_semigroup,
)

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def transport_grid():
    return Grid(0.0, 30.0, 3000)


@pytest.fixture(scope="session")
def transport_model(transport_grid):
    return SystemModel(Generator.TRANSPORT_RIGHT_SHIFT, ControlSpace.SCALAR, transport_grid)


@pytest.fixture(scope="session")
def transport_tgrid():
    return TimeGrid.from_step(9.0, 0.01)


@pytest.fixture(scope="session")
def transport_y0(transport_grid):
    return StateVector.from_function(transport_grid, lambda x: x * np.exp(-x))


@pytest.fixture(scope="session")
def transport_yd(transport_grid):
    x = transport_grid.nodes
    return StateVector(transport_grid, np.where(x >= 9, (x - 9) * np.exp(np.minimum(9 - x, 0)), 0.0))


@pytest.fixture(scope="session")
def heat_grid():
    return Grid(0.0, 1.0, 100)


def sine_state(grid):
    v = np.sin(np.pi * grid.nodes)
    v[0] = v[-1] = 0.0
    return StateVector(grid, v)


@pytest.fixture(scope="session")
def heat_y0(heat_grid):
    return sine_state(heat_grid)


@pytest.fixture(scope="session")
def heat_scalar(heat_grid):
    return SystemModel(Generator.HEAT_DIRICHLET, ControlSpace.SCALAR, heat_grid)


@pytest.fixture(scope="session")
def heat_field(heat_grid):
    return SystemModel(Generator.HEAT_DIRICHLET, ControlSpace.DISTRIBUTED, heat_grid)


def reference_control(model, tgrid, lam=2.0):
    T = tgrid.horizon_T
    return ControlSignal.from_function(model, tgrid, lambda t: (lam - 1) / (T + (lam - 1) * t))


def heat_target(model, y0, tgrid, lam=2.0):
    return StateVector(model.grid, lam * apply_semigroup(model, y0, tgrid).values)


@pytest.fixture(scope="session")
def fig1_run(tmp_path_factory):
    """The transport reproduction run, shared because it takes several seconds."""
    from bilinear_control.scenarios import make_config, run_scenario

    out = tmp_path_factory.mktemp("fig1")
    cfg = make_config({"scenario": "transport_fig1", "output_dir": str(out)})
    return cfg, run_scenario(cfg)
