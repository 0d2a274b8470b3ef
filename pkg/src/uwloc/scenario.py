"""Scenario files: JSON validated against ``SCENARIO_SCHEMA`` and turned into
a :class:`uwloc.sim.Scenario`.

Each entry of ``robots`` is deep-merged over the optional ``robot_defaults``
before validation of its values. See the README for the full key list.
"""

from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import focus
from .camera import Intrinsics
from .control import PIController, PressureArray, default_windup
from .dynamics import RigidBodyState, RobotParams
from .errors import DomainError, ScenarioError
from .protocol import SCHEMES, Topology
from .sim import CameraSpec, Disturbance, Gimbal, NoiseModel, RobotSpec, Scenario, World

_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_GAINS = {"oneOf": [{"type": "number", "minimum": 0}, {**_VEC3, "items": {"type": "number", "minimum": 0}}]}
_NUM = {"type": "number"}

_ROBOT = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "position": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 3},
        "attitude": _VEC3,
        "velocity": _VEC3,
        "depth_setpoints": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        },
        "params": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mass": _NUM, "gravity": _NUM, "drag": _VEC3, "thrust_coeff": _NUM, "inertia": _VEC3,
                "arm_a": _NUM, "arm_b": _NUM, "nu_max": _NUM, "buoyancy": _NUM, "rot_damping": _NUM,
            },
        },
        "controller": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kp": _GAINS, "ki": _GAINS, "kd": _GAINS, "windup": _GAINS,
                "rate_filter": {"type": "number", "minimum": 0},
                "depth_bandwidth": {"type": "number", "exclusiveMinimum": 0},
                "attitude_bandwidth": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "pressure": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sigma": {"type": "number", "minimum": 0},
                "arms": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
            },
        },
        "gimbal": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "pan": _NUM, "tilt": _NUM, "slew": {"type": "number", "exclusiveMinimum": 0},
                "mount": _VEC3, "tilt_limit": _NUM,
            },
        },
        "camera": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "fx": _NUM, "fy": _NUM, "cx": _NUM, "cy": _NUM, "skew": _NUM,
                "width": {"type": "integer", "minimum": 1},
                "height": {"type": "integer", "minimum": 1},
                "min_range": _NUM, "max_range": _NUM,
            },
        },
    },
    "required": ["position", "depth_setpoints"],
}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["world", "robots", "topology", "protocol", "noise", "disturbances", "run"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "world": {
            "type": "object",
            "additionalProperties": False,
            "required": ["tank", "surface"],
            "properties": {
                "tank": _VEC3,
                "surface": _NUM,
                "target": {"oneOf": [_VEC3, {"type": "null"}]},
                "static": {"type": "boolean"},
            },
        },
        "robot_defaults": {"type": "object"},
        "robots": {"type": "array", "minItems": 1, "items": {"type": "object"}},
        "topology": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["complete", "path", "ring"]},
                "edges": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2}},
            },
            "oneOf": [{"required": ["kind"]}, {"required": ["edges"]}],
        },
        "protocol": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "weights": {"enum": list(SCHEMES)},
                "c_alpha": {"type": "number", "minimum": 0},
                "drop_prob": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sigma": {"type": "number", "minimum": 0},
                "mode": {"enum": ["gaussian", "full_pipeline"]},
                "dof_inflation": {"type": "boolean"},
                "aperture": {"type": "number", "exclusiveMinimum": 0},
                "pixel_pitch": {"type": "number", "exclusiveMinimum": 0},
                "ranging": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kappa", "focal", "offset"],
                    "properties": {"kappa": _NUM, "focal": _NUM, "offset": _NUM},
                },
                "blur_scale": {"type": "number", "exclusiveMinimum": 0},
                "frames": {"type": "integer", "minimum": 3},
                "patch": {"type": "integer", "minimum": 8},
            },
        },
        "disturbances": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["time", "robot"],
                "properties": {
                    "time": {"type": "number", "minimum": 0},
                    "robot": {"type": "integer", "minimum": 0},
                    "impulse": _VEC3,
                    "torque_impulse": _VEC3,
                },
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "required": ["rounds"],
            "properties": {
                "rounds": {"type": "integer", "minimum": 0},
                "round_period": {"type": "number", "exclusiveMinimum": 0},
                "control_period": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "acceptance": {"type": "object"},
    },
}

BUNDLED = ("threebot", "push", "depthstep")


def _path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def _validate(data, schema, prefix=()):
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        e = errors[0]
        raise ScenarioError(e.message, _path((*prefix, *e.absolute_path)))


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else copy.deepcopy(v)
    return out


def resolve(data: dict) -> dict:
    """Validate and expand robot defaults; returns a new dict."""
    _validate(data, SCENARIO_SCHEMA)
    data = copy.deepcopy(data)
    defaults = data.pop("robot_defaults", {})
    robots = []
    for i, r in enumerate(data["robots"]):
        merged = _merge(defaults, r)
        _validate(merged, _ROBOT, ("robots", i))
        robots.append(merged)
    data["robots"] = robots
    return data


def _topology(spec, n):
    if "edges" in spec:
        return Topology(n, [tuple(e) for e in spec["edges"]])
    return getattr(Topology, spec["kind"])(n)


def _robot(spec, world_surface) -> RobotSpec:
    params = RobotParams(**spec.get("params", {}))
    setpoints = sorted((float(t), float(d)) for t, d in spec["depth_setpoints"])
    pos = list(spec["position"])
    if len(pos) == 2:
        pos.append(world_surface - setpoints[0][1])
    initial = RigidBodyState(pos, spec.get("attitude", (0, 0, 0)), spec.get("velocity", (0, 0, 0)))

    c = dict(spec.get("controller", {}))
    base = PIController.tuned(params, setpoints[0][1], c.pop("depth_bandwidth", 6.0), c.pop("attitude_bandwidth", 10.0))
    fields = {k: c.get(k, getattr(base, k)) for k in ("kp", "ki", "kd")}
    fields["windup"] = c.get("windup", default_windup(params, np.broadcast_to(fields["ki"], (3,))))
    controller = PIController(target_depth=setpoints[0][1], rate_filter=c.get("rate_filter", base.rate_filter), **fields)

    p = spec.get("pressure", {})
    arms = p.get("arms", (params.arm_a, params.arm_b))
    pressure = PressureArray.corners(arms[0], arms[1], p.get("sigma", 0.001))

    gimbal = Gimbal(**spec.get("gimbal", {}))
    cam = dict(spec.get("camera", {}))
    width, height = cam.pop("width", 640), cam.pop("height", 480)
    intr = Intrinsics.from_focal(cam.pop("fx", 500.0), cam.pop("fy", 500.0), cam.pop("cx", width / 2),
                                 cam.pop("cy", height / 2), cam.pop("skew", 0.0))
    camera = CameraSpec(intr, width, height, cam.pop("min_range", 0.05), cam.pop("max_range", 1.5))
    return RobotSpec(params, initial, controller, pressure, gimbal, camera, setpoints)


def build(data: dict, seed: int | None = None, rounds: int | None = None) -> Scenario:
    """Scenario object from a parsed JSON document (CLI overrides applied)."""
    data = resolve(data)
    try:
        w = data["world"]
        world = World(w["tank"], w["surface"], w.get("target"), w.get("static", True))
        robots = [_robot(r, world.surface) for r in data["robots"]]
        topology = _topology(data["topology"], len(robots))
        run = data["run"]
        master = int(run.get("seed", 0) if seed is None else seed)
        nz = data["noise"]
        ranging = nz.get("ranging")
        noise = NoiseModel(
            sigma=nz.get("sigma", 0.0),
            seed=master,
            mode=nz.get("mode", "gaussian"),
            dof_inflation=nz.get("dof_inflation", False),
            dof=focus.DofParams(nz.get("aperture", 2.0), nz.get("pixel_pitch", 3e-4)),
            ranging=focus.RangingModel.from_dict(ranging) if ranging else NoiseModel().ranging,
            blur_scale=nz.get("blur_scale", 150.0),
            frames=nz.get("frames", 120),
            patch=nz.get("patch", 32),
        )
        pr = data["protocol"]
        disturbances = [
            Disturbance(d["time"], d["robot"], tuple(d.get("impulse", (0, 0, 0))), tuple(d.get("torque_impulse", (0, 0, 0))))
            for d in data["disturbances"]
        ]
        return Scenario(
            world=world,
            robots=robots,
            topology=topology,
            noise=noise,
            weights=pr.get("weights", "uniform-closed"),
            c_alpha=pr.get("c_alpha", 1.0),
            drop_prob=pr.get("drop_prob", 0.0),
            protocol_enabled=pr.get("enabled", True),
            disturbances=disturbances,
            rounds=int(run["rounds"] if rounds is None else rounds),
            round_period=run.get("round_period", 0.5),
            control_period=run.get("control_period", 0.01),
            dt=run.get("dt", 0.001),
            seed=master,
            name=data.get("name", "scenario"),
            acceptance=data.get("acceptance", {}),
            source=data,
        )
    except DomainError as exc:
        raise ScenarioError(str(exc)) from exc


def load(path, seed: int | None = None, rounds: int | None = None) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return build(data, seed, rounds)


def bundled_path(name: str) -> Path:
    """Path of a data file shipped with the package (``threebot`` etc.)."""
    if name in BUNDLED:
        name = f"{name}.json"
    return Path(str(resources.files("uwloc") / "data" / name))


def load_bundled(name: str, seed: int | None = None, rounds: int | None = None) -> Scenario:
    return load(bundled_path(name), seed, rounds)
