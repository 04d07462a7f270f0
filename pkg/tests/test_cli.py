import json
import math

import numpy as np
import pytest

from nonsmooth_ggl import RunConfig, parse_config
from nonsmooth_ggl.cli import (
    _run_many,
    _thread_cap,
    build_model,
    build_stepper,
    main,
    run_experiment,
)

BALL_CFG = RunConfig(
    model="ball",
    scheme="ggl_unified",
    dt=1e-4,
    t_end=0.2,
    epsilon=(0.5,),
    active_tol=2e-8,
    record_stride=10,
)


def test_build_model_epsilon_broadcast():
    cfg = parse_config("model=slider_unilateral\nscheme=moreau\n")
    model = build_model(cfg)
    assert np.allclose(model.eps, [0.1, 0.1, 0.1, 0.1])
    cfg = parse_config("model=slider_unilateral\nscheme=moreau\nepsilon=0.1,0.2,0.3,0.4\n")
    assert np.allclose(build_model(cfg).eps, [0.1, 0.2, 0.3, 0.4])
    cfg = parse_config("model=ball\nscheme=moreau\nepsilon=0.7\n")
    assert build_model(cfg).eps[0] == 0.7


def test_build_stepper_scalar_r_mode():
    cfg = parse_config("model=ball\nscheme=moreau\nr_mode=50.0\n")
    stepper = build_stepper(cfg, build_model(cfg))
    assert stepper.cfg.r_mode == "scalar" and stepper.cfg.r_scale == 50.0


def test_run_experiment_writes_trajectory_and_summary(tmp_path):
    code = run_experiment(BALL_CFG, str(tmp_path))
    assert code == 0
    csv_path = tmp_path / "ball_ggl_unified.csv"
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "t,q,v,g,gd,L,P,E,active,newton_iters"
    expected_rows = math.floor(BALL_CFG.t_end / BALL_CFG.dt / BALL_CFG.record_stride) + 1
    assert len(lines) - 1 == expected_rows

    summary = json.loads((tmp_path / "ball_ggl_unified_summary.json").read_text())
    assert summary["n_steps"] == 2000
    assert summary["E_end"] < summary["E0"]  # restitution below one loses energy
    assert summary["flagged_steps"] == 0
    assert summary["min_gap"] >= -1e-9
    assert "wall_time_s" in summary and "newton_iters_histogram" in summary

    # numbers round-trip through the shortest-decimal format
    first = lines[1].split(",")
    assert float(first[0]) == 0.0
    assert int(first[8]) in (0, 1)


def test_run_experiment_deterministic_output(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert run_experiment(BALL_CFG, str(a)) == 0
    assert run_experiment(BALL_CFG, str(b)) == 0
    csv_a = (a / "ball_ggl_unified.csv").read_bytes()
    csv_b = (b / "ball_ggl_unified.csv").read_bytes()
    assert csv_a == csv_b


def test_run_experiment_json_format(tmp_path):
    cfg = RunConfig(
        model="ball",
        scheme="moreau",
        dt=1e-3,
        t_end=0.1,
        epsilon=(0.5,),
        format="json",
        record_stride=5,
    )
    assert run_experiment(cfg, str(tmp_path)) == 0
    payload = json.loads((tmp_path / "ball_moreau.json").read_text())
    assert payload["columns"][0] == "t"
    assert len(payload["rows"]) == math.floor(0.1 / 1e-3 / 5) + 1


def test_run_experiment_flags_nonconverged(tmp_path):
    # the bilateral constraint is nonlinear in q, one iteration cannot converge
    cfg = RunConfig(
        model="slider_bilateral",
        scheme="dae_ggl",
        dt=1e-4,
        t_end=0.01,
        max_iter=1,
    )
    code = run_experiment(cfg, str(tmp_path))
    assert code == 2
    summary = json.loads(
        (tmp_path / "slider_bilateral_dae_ggl_summary.json").read_text()
    )
    assert summary["flagged_steps"] > 0
    assert (tmp_path / "slider_bilateral_dae_ggl.csv").exists()


def test_run_experiment_io_failure(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("not a directory")
    cfg = RunConfig(model="ball", scheme="moreau", dt=1e-3, t_end=0.01, epsilon=(0.5,))
    code = run_experiment(cfg, str(blocker / "sub"))
    assert code == 1
    assert "cannot write" in capsys.readouterr().err


def test_slider_schema_headers(tmp_path):
    cfg = RunConfig(
        model="slider_unilateral",
        scheme="moreau",
        dt=1e-5,
        t_end=0.002,
        epsilon=(0.1,),
        record_stride=10,
    )
    assert run_experiment(cfg, str(tmp_path)) == 0
    header = (tmp_path / "slider_unilateral_moreau.csv").read_text().splitlines()[0]
    assert header == (
        "t,theta1,theta2,theta3,omega1,omega2,omega3,"
        "g1,g2,g3,g4,gd1,gd2,gd3,gd4,L1,L2,L3,L4,P1,P2,P3,P4,"
        "E,active_mask,newton_iters"
    )

    cfg = RunConfig(model="slider_bilateral", scheme="dae_ggl", dt=1e-4, t_end=0.01)
    assert run_experiment(cfg, str(tmp_path)) == 0
    header = (tmp_path / "slider_bilateral_dae_ggl.csv").read_text().splitlines()[0]
    assert header == "t,theta1,theta2,omega1,omega2,g,gd,lambda,psi,E,newton_iters"


def test_thread_cap_respects_environment(monkeypatch):
    monkeypatch.delenv("NONSMOOTH_GGL_THREADS", raising=False)
    assert _thread_cap(3) >= 1
    monkeypatch.setenv("NONSMOOTH_GGL_THREADS", "2")
    assert _thread_cap(8) == 2
    monkeypatch.setenv("NONSMOOTH_GGL_THREADS", "junk")
    assert _thread_cap(8) == 1


def test_run_many_parallel_members(tmp_path, monkeypatch):
    monkeypatch.setenv("NONSMOOTH_GGL_THREADS", "2")
    configs = [
        RunConfig(model="ball", scheme="moreau", dt=1e-3, t_end=0.05, epsilon=(0.5,), name="m1"),
        RunConfig(model="ball", scheme="ggl_decoupled", dt=1e-3, t_end=0.05, epsilon=(0.5,), name="m2"),
    ]
    assert _run_many(configs, str(tmp_path)) == 0
    assert (tmp_path / "m1.csv").exists() and (tmp_path / "m2.csv").exists()


def test_main_list_presets(capsys):
    assert main(["list-presets"]) == 0
    out = capsys.readouterr().out
    assert "fig3_eps01" in out and "fig10_energy" in out


def test_main_run_config_file(tmp_path):
    cfg_file = tmp_path / "run.txt"
    cfg_file.write_text(
        "model=ball\nscheme=moreau\ndt=1e-3\nt_end=0.1\nepsilon=0.5\nname=demo\n"
    )
    assert main(["run", "--config", str(cfg_file), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "demo.csv").exists()


def test_main_rejects_bad_inputs(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("model=ball\nscheme=dae_pos\n")
    assert main(["run", "--config", str(bad)]) == 1
    assert "error" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.txt")]) == 1
    assert main(["run", "--preset", "fig11_nope"]) == 1
