import copy
import json
import math

import numpy as np
import pytest

from uwloc import scenario
from uwloc.camera import Intrinsics, in_view
from uwloc.dynamics import RigidBodyState, RobotParams
from uwloc.errors import DomainError, ScenarioError, SimulationError
from uwloc.sim import (
    CameraSpec,
    Gimbal,
    NoiseModel,
    World,
    aim_gimbal,
    apply_disturbance,
    camera_extrinsics,
    measure,
    run_scenario,
)

WORLD = World([1.5, 1.2, 0.8], 0.5, [0.95, 0.55, 0.05])
CAMERA = CameraSpec(Intrinsics.from_focal(500, 500, 320, 240))
BODY = RigidBodyState([0.35, 0.3, 0.2])


def aimed_rig(body=BODY, target=WORLD.target):
    g = aim_gimbal(Gimbal(slew=100.0), body, target, 1.0)
    return CAMERA.rig(camera_extrinsics(body, g))


def threebot_doc():
    return json.loads(scenario.bundled_path("threebot").read_text())


def test_world_validation():
    with pytest.raises(DomainError):
        World([1, 1, 1], 0.5, [2, 0, 0])
    with pytest.raises(DomainError):
        World([1, 1, 1], 0.0)
    assert WORLD.diagonal == pytest.approx(math.sqrt(1.5**2 + 1.2**2 + 0.8**2))


def test_camera_axes_follow_pan_and_tilt():
    level = CAMERA.rig(camera_extrinsics(BODY, Gimbal()))
    assert np.allclose(level.optical_axis, [1, 0, 0])
    down = CAMERA.rig(camera_extrinsics(BODY, Gimbal(pan=math.pi / 2, tilt=0.4)))
    assert np.allclose(down.optical_axis, [0, math.cos(0.4), -math.sin(0.4)])
    # image rows grow downward in the world
    assert np.allclose(level.extrinsics.rotation[:, 1], [0, 0, -1])


def test_measure_noiseless_is_exact():
    m = measure(WORLD, aimed_rig(), NoiseModel(sigma=0.0), np.random.default_rng(0))
    assert np.array_equal(m, WORLD.target)


def test_measure_behind_camera_is_absent():
    away = CAMERA.rig(camera_extrinsics(BODY, Gimbal(pan=math.pi)))
    assert measure(WORLD, away, NoiseModel(sigma=0.002), np.random.default_rng(0)) is None
    assert measure(World([1.5, 1.2, 0.8], 0.5), aimed_rig(), NoiseModel(), np.random.default_rng(0)) is None


def test_measure_statistics():
    sigma = 0.002
    rig = aimed_rig()
    rng = np.random.default_rng(5)
    draws = np.array([measure(WORLD, rig, NoiseModel(sigma=sigma), rng) for _ in range(10_000)])
    assert np.all(np.abs(draws.mean(axis=0) - WORLD.target) < 3 * sigma / 100)
    assert np.all(np.abs(draws.std(axis=0) / sigma - 1) < 0.05)


def test_dof_inflation_spreads_along_optical_axis():
    rig = aimed_rig()
    rng = np.random.default_rng(1)
    noise = NoiseModel(sigma=0.0, dof_inflation=True)
    d = np.array([measure(WORLD, rig, noise, rng) for _ in range(500)]) - WORLD.target
    along = d @ rig.optical_axis
    across = d - np.outer(along, rig.optical_axis)
    assert along.std() > 0
    assert np.abs(across).max() < 1e-12


def test_full_pipeline_measurement():
    m = measure(WORLD, aimed_rig(), NoiseModel(mode="full_pipeline"), np.random.default_rng(2))
    assert np.linalg.norm(m - WORLD.target) < 0.01


def test_aim_examples():
    rig_gimbal = aim_gimbal(Gimbal(slew=100.0), BODY, WORLD.target, 1.0)
    again = aim_gimbal(rig_gimbal, BODY, WORLD.target, 0.1)
    assert (again.pan, again.tilt) == (rig_gimbal.pan, rig_gimbal.tilt)

    above = BODY.position + np.array([0, 0, 0.06 + 0.3])
    g = aim_gimbal(Gimbal(slew=100.0), BODY, above, 1.0)
    assert g.tilt == -g.tilt_limit

    g = aim_gimbal(Gimbal(slew=1.0), BODY, BODY.position + [0, 1.0, 0.06], 0.1)
    assert g.pan == pytest.approx(0.1, abs=1e-15)
    assert g.tilt == 0.0


def test_aim_takes_shortest_way_round():
    g = Gimbal(pan=3.0, slew=1.0)
    behind = BODY.position + [-1.0, -0.2, 0.06]
    out = aim_gimbal(g, BODY, behind, 0.1)
    assert out.pan == pytest.approx(3.1, abs=1e-12)


def test_apply_disturbance_examples():
    p = RobotParams()
    s = RigidBodyState()
    assert np.array_equal(apply_disturbance(s, p).as_vector(), s.as_vector())
    assert apply_disturbance(s, p, (0, 0, 0.9)).velocity[2] == pytest.approx(0.9 / p.mass)
    assert apply_disturbance(s, p, torque_impulse=(0.045, 0, 0)).rates[0] == pytest.approx(0.045 / p.inertia[0])


def short_threebot(rounds=12, **changes):
    doc = threebot_doc()
    doc["run"]["rounds"] = rounds
    for key, value in changes.items():
        doc[key] = value
    return scenario.build(doc)


def test_no_viewer_leaves_estimates_empty():
    doc = threebot_doc()
    doc["run"]["rounds"] = 5
    doc["robot_defaults"]["camera"]["max_range"] = 0.1
    log = run_scenario(scenario.build(doc))
    assert np.all(np.isnan(log.estimates))
    assert not log.valid.any()


def test_run_is_deterministic():
    a = run_scenario(short_threebot())
    b = run_scenario(short_threebot())
    for field in ("estimates", "measurements", "nu", "zeta", "body", "gimbal"):
        assert np.array_equal(getattr(a, field), getattr(b, field), equal_nan=True)


def test_seed_changes_noise():
    a = run_scenario(short_threebot())
    b = run_scenario(scenario.build(threebot_doc(), seed=99, rounds=12))
    assert not np.array_equal(a.measurements, b.measurements, equal_nan=True)


def test_valid_set_matches_field_of_view():
    sc = short_threebot(rounds=30)
    log = run_scenario(sc)
    per_round = sc.controls_per_round
    for t in range(log.rounds):
        for i, spec in enumerate(sc.robots):
            body = RigidBodyState.from_vector(log.body[(t + 1) * per_round - 1, i])
            pan, tilt = log.gimbal[t, i]
            g = Gimbal(pan, tilt, spec.gimbal.slew, spec.gimbal.mount, spec.gimbal.tilt_limit)
            rig = spec.camera.rig(camera_extrinsics(body, g))
            assert log.valid[t, i] == in_view(rig, sc.world.target)


def test_noiseless_joins_are_monotone_and_converge():
    doc = threebot_doc()
    doc["noise"]["sigma"] = 0.0
    doc["run"]["rounds"] = 40
    sc = scenario.build(doc)
    log = run_scenario(sc)
    sizes = log.valid[:-1].sum(axis=1)
    assert np.all(np.diff(sizes) >= 0)
    assert sizes[-1] == 3
    assert np.allclose(log.estimates[-1], sc.world.target, atol=1e-12)
    assert np.array_equal(sc.world.target, [0.95, 0.55, 0.05])


def test_module_error_carries_round_index():
    doc = json.loads(scenario.bundled_path("push").read_text())
    doc["disturbances"] = [{"time": 1.2, "robot": 0, "torque_impulse": [0, 2.0, 0]}]
    with pytest.raises(SimulationError) as info:
        run_scenario(scenario.build(doc))
    assert info.value.round_index == 2


def test_schema_errors_name_the_json_path():
    doc = threebot_doc()
    doc["robots"][1]["gimbal"]["slew"] = -1
    with pytest.raises(ScenarioError) as info:
        scenario.build(doc)
    assert info.value.path == "$.robots[1].gimbal.slew"

    doc = threebot_doc()
    del doc["run"]
    with pytest.raises(ScenarioError) as info:
        scenario.build(doc)
    assert info.value.path == "$"

    doc = threebot_doc()
    doc["noise"]["sigma"] = "2mm"
    with pytest.raises(ScenarioError) as info:
        scenario.build(doc)
    assert info.value.path == "$.noise.sigma"


def test_inconsistent_scenarios_rejected():
    doc = threebot_doc()
    doc["topology"] = {"edges": [[0, 1]]}
    with pytest.raises(ScenarioError):
        scenario.build(doc)
    doc = threebot_doc()
    doc["disturbances"] = [{"time": 1.0, "robot": 5}]
    with pytest.raises(ScenarioError):
        scenario.build(doc)
    doc = threebot_doc()
    doc["run"]["control_period"] = 0.0123
    with pytest.raises(ScenarioError):
        scenario.build(doc)


def test_robot_defaults_merge():
    doc = threebot_doc()
    resolved = scenario.resolve(copy.deepcopy(doc))
    assert "robot_defaults" not in resolved
    assert resolved["robots"][1]["gimbal"] == {"slew": 0.15, "mount": [0.0, 0.0, 0.06], "pan": 1.22, "tilt": 0.3}
    sc = scenario.build(doc)
    assert sc.robots[0].initial.position[2] == pytest.approx(0.5 - 0.3)


def test_overrides():
    sc = scenario.build(threebot_doc(), seed=5, rounds=3)
    assert (sc.seed, sc.rounds, sc.noise.seed) == (5, 3, 5)
