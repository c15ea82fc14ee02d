import json

import numpy as np
import pytest

from bilinear_control import apply_semigroup
from bilinear_control.cli import main
from bilinear_control.scenarios import (
    ConfigError,
    Mode,
    RunArtifacts,
    Scenario,
    build_problem,
    emit_plot_data,
    load_config,
    load_report,
    make_config,
    read_csv,
    run_scenario,
    with_overrides,
)


def _write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_empty_file_gives_transport_defaults(tmp_path):
    cfg = load_config(_write(tmp_path, ""), scenario="transport_fig1")
    assert cfg.scenario is Scenario.TRANSPORT_FIG1 and cfg.mode is Mode.CONSTRAINED
    assert (cfg.x_min, cfg.x_max, cfg.dx, cfg.dt, cfg.horizon_T, cfg.r) == (0.0, 30.0, 0.01, 0.01, 9.0, 2.0)


def test_lambda_key_and_types(tmp_path):
    cfg = load_config(_write(tmp_path, 'scenario = "heat_scalar"\nlambda = 3\nn_stages = 4\n'))
    assert cfg.lam == 3.0 and isinstance(cfg.lam, float) and cfg.n_stages == 4


@pytest.mark.parametrize(
    "text, field",
    [
        ('scenario = "transport_fig1"\ndt = 0.02\n', "dt"),
        ('scenario = "heat_scalar"\nr = -1.0\n', "r"),
        ('scenario = "heat_scalar"\ncolour = 1\n', "colour"),
        ('scenario = "heat_distributed"\nmode = "feedback"\n', "mode"),
        ('scenario = "heat_scalar"\nlambda = 0.5\n', "lambda"),
        ('scenario = "nope"\n', "scenario"),
    ],
)
def test_invalid_configs_name_field(tmp_path, text, field):
    with pytest.raises(ConfigError) as info:
        load_config(_write(tmp_path, text))
    assert info.value.field == field


def test_exact_shift_message(tmp_path):
    with pytest.raises(ConfigError, match="exact-shift"):
        load_config(_write(tmp_path, 'scenario = "transport_fig1"\ndt = 0.005\n'))


def test_parse_error_has_line(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_config(_write(tmp_path, 'scenario = "heat_scalar"\n\nr = = 2\n'))
    assert info.value.line == 3


def test_heat_problem_target():
    cfg = make_config({"scenario": "heat_scalar"})
    p = build_problem(cfg)
    assert p.reference_v.integral() == pytest.approx(np.log(2.0), abs=1e-6)
    S_T = apply_semigroup(p.model, p.y0, p.tgrid).values
    np.testing.assert_allclose(p.y_d.values, 2.0 * S_T, rtol=1e-12)


def test_custom_problem_expressions():
    cfg = make_config({"scenario": "custom", "generator": "heat", "control_space": "distributed",
                       "horizon_T": 0.05, "y0": "sin(pi*x)", "reference_v": "x*cos(t)"})
    p = build_problem(cfg)
    assert p.model.control_space.value == "distributed"
    assert p.y0.values[0] == 0.0 and p.y0.values[-1] == 0.0
    np.testing.assert_allclose(p.reference_v.values[3], p.model.grid.nodes * np.cos(p.tgrid.times[3]))


def test_fig1_summary_and_overlay(fig1_run):
    cfg, art = fig1_run
    s = art.summary
    assert s["converged"]
    assert s["J_v"] == pytest.approx(2.25, abs=0.01)
    assert 1.12 <= s["J_u"] <= 1.37
    assert s["ratio_Jv_over_Ju"] == pytest.approx(s["J_v"] / s["J_u"])
    overlay = emit_plot_data(art)
    header, data = read_csv(overlay)
    assert header == ["x", "y_T", "y_d"]
    assert np.max(np.abs(data[:, 1] - data[:, 2])) <= 1e-2 * data[:, 2].max()


def test_artifact_schemas(tmp_path):
    cfg = make_config({"scenario": "heat_distributed", "mode": "penalized", "horizon_T": 0.05,
                       "eps_start": 0.1, "output_dir": str(tmp_path)})
    art = run_scenario(cfg)
    h, c = read_csv(art.control_csv)
    assert h == ["t", "x", "u"] and c.shape == (51 * 101, 3)
    h, tr = read_csv(art.trajectory_csv)
    assert h == ["t", "x", "y"]
    assert tr[:, 0].max() == pytest.approx(0.05)
    rep = load_report(art.report_json)
    assert len(rep["continuation"]["stages"]) == 1
    assert rep == json.loads(json.dumps(art.report))


def test_heat_feedback_run_reports_log_two(tmp_path):
    cfg = make_config({"scenario": "heat_scalar", "mode": "feedback", "output_dir": str(tmp_path)})
    art = run_scenario(cfg)
    assert art.summary["control_integral"] == pytest.approx(np.log(2.0), abs=1e-3)
    h, c = read_csv(art.control_csv)
    assert h == ["t", "u"]


def test_overlay_errors(tmp_path):
    art = RunArtifacts(tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv",
                       tmp_path / "d.json", {})
    with pytest.raises(FileNotFoundError):
        emit_plot_data(art)
    (tmp_path / "b.csv").write_text("t,x,y\n")
    (tmp_path / "c.csv").write_text("x,y_d\n0.0,0.0\n")
    with pytest.raises(ValueError):
        emit_plot_data(art)


def test_with_overrides_validates():
    cfg = make_config({"scenario": "heat_scalar"})
    with pytest.raises(ConfigError):
        with_overrides(cfg, r=0.0)
    assert with_overrides(cfg, r=3.0).r == 3.0


def test_cli_list_scenarios(capsys):
    assert main(["--list-scenarios"]) == 0
    out = capsys.readouterr().out
    for name in ("transport_fig1", "heat_scalar", "heat_distributed", "custom"):
        assert name in out


def test_cli_exit_codes(tmp_path, capsys):
    ok = _write(tmp_path, 'scenario = "heat_scalar"\nmode = "feedback"\nhorizon_T = 0.1\n', "ok.toml")
    bad = _write(tmp_path, 'scenario = "transport_fig1"\ndt = 0.02\n', "bad.toml")
    stuck = _write(tmp_path, 'scenario = "heat_scalar"\nhorizon_T = 0.1\nmax_iters = 1\nn_stages = 1\n',
                   "stuck.toml")
    boom = _write(
        tmp_path,
        'scenario = "custom"\ngenerator = "heat"\ncontrol_space = "scalar"\nmode = "feedback"\n'
        'y0 = "sin(pi*x)"\nreference_v = "1e4"\n',
        "boom.toml",
    )
    assert main(["run", str(ok), "--out", str(tmp_path / "ok")]) == 0
    assert (tmp_path / "ok" / "overlay.csv").exists()
    assert main(["run", str(bad)]) == 2
    assert main(["run", str(tmp_path / "missing.toml")]) == 2
    assert main(["run", str(stuck), "--out", str(tmp_path / "stuck"), "--no-plot-data"]) == 3
    assert not (tmp_path / "stuck" / "overlay.csv").exists()
    assert main(["run", str(boom), "--out", str(tmp_path / "boom")]) == 4
    assert "diverge" in capsys.readouterr().err.lower()


def test_cli_parallel_jobs(tmp_path):
    paths = []
    for i in range(2):
        paths.append(_write(
            tmp_path,
            f'scenario = "heat_scalar"\nmode = "feedback"\nhorizon_T = 0.1\noutput_dir = "{tmp_path / str(i)}"\n',
            f"c{i}.toml",
        ))
    assert main(["run", *map(str, paths), "--jobs", "2"]) == 0
    a = (tmp_path / "0" / "report.json").read_bytes()
    b = (tmp_path / "1" / "report.json").read_bytes()
    # only output_dir differs between the two configs
    assert json.loads(a)["costs"] == json.loads(b)["costs"]
