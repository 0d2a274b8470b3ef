import csv
import json

import numpy as np
import pytest

from uwloc import focus, logs, report, scenario, stackio
from uwloc.cli import main
from uwloc.sim import REFERENCE_RANGING, run_scenario


def bundled_doc(name):
    return json.loads(scenario.bundled_path(name).read_text())


def write_doc(tmp_path, doc, name="sc.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_calibrate_bundled(tmp_path, capsys):
    assert main(["calibrate", str(scenario.bundled_path("calibration.csv")), "--out", str(tmp_path)]) == 0
    model = json.loads((tmp_path / "model.json").read_text())
    assert model["r_squared"] >= 0.99
    assert (tmp_path / "calibration.png").stat().st_size > 0
    assert "R^2" in capsys.readouterr().out


def test_calibrate_noiseless(tmp_path):
    u = np.linspace(10, 120, 12)
    stackio.write_calibration_csv(tmp_path / "c.csv", np.column_stack([REFERENCE_RANGING.position(u), u]))
    assert main(["calibrate", str(tmp_path / "c.csv"), "--out", str(tmp_path), "--quiet"]) == 0
    assert json.loads((tmp_path / "model.json").read_text())["rmse"] < 1e-6


def test_calibrate_preconditions(tmp_path, capsys):
    u = np.array([20.0, 50.0, 90.0])
    stackio.write_calibration_csv(tmp_path / "three.csv", np.column_stack([REFERENCE_RANGING.position(u), u]))
    assert main(["calibrate", str(tmp_path / "three.csv"), "--out", str(tmp_path)]) == 2

    (tmp_path / "bad.csv").write_text("rho_star,u_cm\n3.0,20\n3.5,abc\n")
    assert main(["calibrate", str(tmp_path / "bad.csv"), "--out", str(tmp_path)]) == 2
    assert ":3" in capsys.readouterr().err
    assert main(["calibrate", str(tmp_path / "missing.csv")]) == 2


def test_usage_errors():
    assert main([]) == 2
    assert main(["bogus"]) == 2
    assert main(["scenario", "push", "--seed", "x"]) == 2


def test_depthmap(tmp_path):
    rng = np.random.default_rng(0)
    texture = rng.random((100, 100))
    positions = focus.sweep_positions(REFERENCE_RANGING, 20, 120, 15)
    stack = focus.simulate_focus_stack(45.0, texture, focus.ThinLens(REFERENCE_RANGING.focal),
                                       focus.DofParams(2.0, 3e-4), REFERENCE_RANGING, positions)
    stackio.write_stack(stack, tmp_path / "stack")
    (tmp_path / "model.json").write_text(json.dumps(REFERENCE_RANGING.to_dict()))
    code = main(["depthmap", str(tmp_path / "stack"), "--model", str(tmp_path / "model.json"),
                 "--out", str(tmp_path / "dm"), "--quiet"])
    assert code == 0
    depth = np.loadtxt(tmp_path / "dm" / "depth.csv", delimiter=",")
    assert depth.shape == (2, 2)
    assert np.all(np.abs(depth - 45.0) < 5.0)
    assert (tmp_path / "dm" / "depth.png").exists()
    assert main(["depthmap", str(tmp_path / "nostack"), "--model", str(tmp_path / "model.json")]) == 2


def test_protocol_replay_reproduces_scenario(tmp_path):
    assert main(["scenario", "threebot", "--rounds", "20", "--out", str(tmp_path / "run"), "--quiet"]) in (0, 1)
    code = main(["protocol-run", str(tmp_path / "run" / "measurements.csv"), "--out", str(tmp_path / "replay"),
                 "--target", "0.95,0.55,0.05", "--quiet"])
    assert code == 0
    assert (tmp_path / "run" / "trajectory.csv").read_bytes() == (tmp_path / "replay" / "trajectory.csv").read_bytes()
    assert (tmp_path / "replay" / "summary.csv").exists()


def test_protocol_run_bundled_replay(tmp_path, capsys):
    assert main(["protocol-run", str(scenario.bundled_path("threebot_replay.csv")), "--out", str(tmp_path)]) == 0
    assert "node 2" in capsys.readouterr().out


def test_scenario_push_reports_recovery(tmp_path, capsys):
    assert main(["scenario", "push", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "recovery time" in out and "PASS" in out
    for name in logs.FILES + ("report.csv", "control.png", "scenario.json"):
        assert (tmp_path / name).exists(), name


def test_failed_threshold_exits_one(tmp_path):
    doc = bundled_doc("push")
    doc["acceptance"]["recovery"]["max_time"] = 0.01
    assert main(["scenario", write_doc(tmp_path, doc), "--out", str(tmp_path / "o"), "--quiet"]) == 1


def test_schema_violation_reports_path(tmp_path, capsys):
    doc = bundled_doc("push")
    doc["robots"][0]["gimbal"] = {"slew": "fast"}
    assert main(["scenario", write_doc(tmp_path, doc), "--out", str(tmp_path / "o")]) == 2
    assert "$.robots[0].gimbal.slew" in capsys.readouterr().err
    assert main(["scenario", str(tmp_path / "none.json")]) == 2


def test_hover_without_push_recovers_in_zero(tmp_path, capsys):
    assert main(["hover", "--seconds", "3", "--out", str(tmp_path / "h"), "--quiet"]) == 0
    assert main(["report", str(tmp_path / "h"), "--no-figures"]) == 0
    rows = dict(csv.reader(open(tmp_path / "h" / "report.csv")))
    assert float(rows["recovery_time_s"]) == 0.0


def test_hover_with_push(tmp_path):
    code = main(["hover", "--seconds", "6", "--push-time", "2", "--out", str(tmp_path), "--quiet"])
    assert code == 0


def test_report_join_rounds_match_trajectory(tmp_path, capsys):
    main(["scenario", "threebot", "--rounds", "40", "--out", str(tmp_path), "--quiet"])
    assert main(["report", str(tmp_path), "--out", str(tmp_path / "rep")]) == 0
    rows = dict(csv.reader(open(tmp_path / "rep" / "report.csv")))
    first = {}
    for r in csv.DictReader(open(tmp_path / "trajectory.csv")):
        if r["in_valid_set"] == "1":
            first.setdefault(int(r["node"]), int(r["t"]))
    assert rows["join_rounds"] == ";".join(str(first[i]) for i in range(3))
    assert (tmp_path / "rep" / "convergence.png").exists()


def test_report_missing_logs(tmp_path):
    assert main(["report", str(tmp_path)]) == 2
    assert main(["report", str(tmp_path / "nope")]) == 2


def test_log_round_trip(tmp_path):
    sc = scenario.build(bundled_doc("threebot"), rounds=6)
    log = run_scenario(sc)
    logs.write_log(tmp_path, log)
    back = logs.read_log(tmp_path)
    for field in ("estimates", "valid", "measurements", "gimbal", "nu", "zeta", "saturated", "body", "setpoint"):
        assert np.array_equal(getattr(log, field), getattr(back, field), equal_nan=True), field
    assert np.allclose(back.control_t, log.control_t, rtol=0, atol=1e-9)
    assert report.join_rounds(back) == report.join_rounds(log)


def test_outputs_are_byte_identical(tmp_path):
    for k in ("a", "b"):
        assert main(["scenario", "depthstep", "--rounds", "6", "--out", str(tmp_path / k), "--quiet"]) in (0, 1)
    for name in logs.FILES + ("report.csv", "control.png"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


@pytest.mark.parametrize("after,expected", [(0.0, 0.0)])
def test_recovery_time_of_settled_robot(after, expected):
    log = run_scenario(scenario.build(bundled_doc("push"), rounds=4))
    assert report.recovery_time(log, 0, after) == expected
