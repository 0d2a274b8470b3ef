"""Multi-robot tank simulation: physics, depth hold, gimbal aiming and the
distributed localisation protocol, advanced in synchronous rounds.

World units are metres (Z up, origin at a tank floor corner); the focus
ranging model works in centimetres.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from . import focus
from .camera import CameraRig, Extrinsics, Intrinsics, in_view, localize, project
from .control import ALLOCATION, PIController, PressureArray, control_step
from .dynamics import RigidBodyState, RobotParams, integrate, rotation_matrix
from .errors import DomainError, SimulationError, UwlocError
from .protocol import (
    UNIFORM_CLOSED,
    ProtocolState,
    StepSchedule,
    Topology,
    draw_dropped_edges,
    protocol_round,
)

CM_PER_M = 100.0

# independent random streams, keyed with (seed, round, robot, stream)
STREAM_MEASURE = 1
STREAM_PRESSURE = 2
STREAM_DROP = 3

# camera axes (right, down, forward) expressed in the gimbal frame, whose
# X axis is the pointing direction at zero pan and tilt
_CAMERA_BASE = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])

REFERENCE_RANGING = focus.RangingModel(0.3922, 0.7431, 0.7577)


@dataclass(frozen=True)
class World:
    tank: np.ndarray
    surface: float
    target: Optional[np.ndarray] = None
    static: bool = True

    def __post_init__(self):
        tank = np.array(self.tank, dtype=float).reshape(3)
        if np.any(tank <= 0):
            raise DomainError("tank extents must be positive")
        if not 0 < self.surface <= tank[2]:
            raise DomainError("water surface must lie inside the tank")
        tank.setflags(write=False)
        object.__setattr__(self, "tank", tank)
        if self.target is not None:
            x = np.array(self.target, dtype=float).reshape(3)
            if np.any(x < 0) or np.any(x > tank):
                raise DomainError("target must lie inside the tank")
            x.setflags(write=False)
            object.__setattr__(self, "target", x)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.tank))


@dataclass(frozen=True)
class NoiseModel:
    """Per-axis Gaussian measurement noise (m) and measurement pipeline options.

    ``mode`` is ``"gaussian"`` (target position plus noise) or
    ``"full_pipeline"`` (render a focus sweep of the target patch and range
    it with the depth-from-focus chain).
    """

    sigma: float = 0.0
    seed: int = 0
    mode: str = "gaussian"
    dof_inflation: bool = False
    dof: focus.DofParams = focus.DofParams(2.0, 3e-4)
    ranging: focus.RangingModel = REFERENCE_RANGING
    blur_scale: float = 150.0
    frames: int = 120
    patch: int = 32

    def __post_init__(self):
        if self.sigma < 0:
            raise DomainError("measurement sigma must be non-negative")
        if self.mode not in ("gaussian", "full_pipeline"):
            raise DomainError(f"unknown measurement mode {self.mode!r}")


@dataclass(frozen=True)
class Gimbal:
    """Pan (about body Z) and tilt (positive looks down) camera mount."""

    pan: float = 0.0
    tilt: float = 0.0
    slew: float = 2.0
    mount: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.06]))
    tilt_limit: float = math.pi / 2 - 1e-3

    def __post_init__(self):
        m = np.array(self.mount, dtype=float).reshape(3)
        m.setflags(write=False)
        object.__setattr__(self, "mount", m)
        if not 0 < self.tilt_limit < math.pi / 2:
            raise DomainError("tilt limit must lie in (0, pi/2)")
        if abs(self.tilt) > self.tilt_limit:
            raise DomainError("tilt outside its limit")
        if self.slew <= 0:
            raise DomainError("slew limit must be positive")


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _wrap(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


def camera_extrinsics(body: RigidBodyState, gimbal: Gimbal) -> Extrinsics:
    """Camera pose: body rotation, then pan about Z, then tilt about Y."""
    R_body = rotation_matrix(body.attitude)
    R = R_body @ _rz(gimbal.pan) @ _ry(gimbal.tilt) @ _CAMERA_BASE
    return Extrinsics(R, body.position + R_body @ gimbal.mount)


def aim_gimbal(gimbal: Gimbal, body: RigidBodyState, target, dt: float) -> Gimbal:
    """Slew pan/tilt toward ``target`` by at most ``slew * dt`` per axis."""
    R_body = rotation_matrix(body.attitude)
    cam = body.position + R_body @ gimbal.mount
    d = R_body.T @ (np.asarray(target, dtype=float) - cam)
    horiz = math.hypot(d[0], d[1])
    if horiz == 0.0 and d[2] == 0.0:
        return gimbal
    pan_goal = math.atan2(d[1], d[0]) if horiz > 0 else gimbal.pan
    tilt_goal = max(-gimbal.tilt_limit, min(gimbal.tilt_limit, math.atan2(-d[2], horiz)))
    step = gimbal.slew * dt
    pan = _wrap(gimbal.pan + max(-step, min(step, _wrap(pan_goal - gimbal.pan))))
    tilt = gimbal.tilt + max(-step, min(step, tilt_goal - gimbal.tilt))
    tilt = max(-gimbal.tilt_limit, min(gimbal.tilt_limit, tilt))
    return Gimbal(pan, tilt, gimbal.slew, gimbal.mount, gimbal.tilt_limit)


def apply_disturbance(state: RigidBodyState, params: RobotParams, impulse=(0, 0, 0), torque_impulse=(0, 0, 0)) -> RigidBodyState:
    """Instantaneous push: linear impulse / m and torque impulse / I."""
    dv = np.asarray(impulse, dtype=float) / params.mass
    dw = np.asarray(torque_impulse, dtype=float) / np.array(params.inertia)
    return RigidBodyState(state.position, state.attitude, state.velocity + dv, state.rates + dw)


def _dof_bound(noise: NoiseModel, depth_m: float) -> float:
    lens = focus.ThinLens(noise.ranging.focal)
    return focus.depth_of_field(lens, noise.dof, depth_m * CM_PER_M) / CM_PER_M


def measure(world: World, rig: CameraRig, noise: NoiseModel, rng) -> Optional[np.ndarray]:
    """Position measurement of the target, or None when it is not in view."""
    if world.target is None or not in_view(rig, world.target):
        return None
    if noise.mode == "full_pipeline":
        return measure_full_pipeline(world, rig, noise, rng)
    delta = rng.normal(0.0, noise.sigma, 3) if noise.sigma > 0 else np.zeros(3)
    if noise.dof_inflation:
        _, z = project(rig, world.target)
        try:
            half = 0.5 * _dof_bound(noise, z)
        except DomainError:
            return None
        delta = delta + rng.normal(0.0, half) * rig.optical_axis
    return world.target + delta


def measure_full_pipeline(world: World, rig: CameraRig, noise: NoiseModel, rng) -> Optional[np.ndarray]:
    """Range the target by rendering and analysing a focus sweep of its patch."""
    pixel, z = project(rig, world.target)
    model = noise.ranging
    tex = ndimage.gaussian_filter(rng.random((noise.patch, noise.patch)), 0.7)
    tex = (tex - tex.min()) / (tex.max() - tex.min())
    lens = focus.ThinLens(model.focal)
    positions = focus.sweep_positions(model, rig.min_range * CM_PER_M, rig.max_range * CM_PER_M, noise.frames)
    stack = focus.simulate_focus_stack(z * CM_PER_M, tex, lens, noise.dof, model, positions, noise.blur_scale)
    depth_cm = focus.depth_map(stack, model, block=noise.patch)[0, 0]
    if not np.isfinite(depth_cm):
        return None
    return localize(rig, pixel, depth_cm / CM_PER_M)


@dataclass(frozen=True)
class Disturbance:
    time: float
    robot: int
    impulse: tuple = (0.0, 0.0, 0.0)
    torque_impulse: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class CameraSpec:
    intrinsics: Intrinsics
    width: int = 640
    height: int = 480
    min_range: float = 0.05
    max_range: float = 1.5

    def rig(self, extrinsics: Extrinsics) -> CameraRig:
        return CameraRig(self.intrinsics, extrinsics, self.width, self.height, self.min_range, self.max_range)


@dataclass
class RobotSpec:
    params: RobotParams
    initial: RigidBodyState
    controller: PIController
    pressure: PressureArray
    gimbal: Gimbal
    camera: CameraSpec
    setpoints: list  # [(time, depth)], time-ordered

    def depth_setpoint(self, t: float) -> float:
        depth = self.setpoints[0][1]
        for when, d in self.setpoints:
            if t + 1e-12 >= when:
                depth = d
        return depth


@dataclass
class Scenario:
    world: World
    robots: list
    topology: Topology
    noise: NoiseModel = field(default_factory=NoiseModel)
    weights: str = UNIFORM_CLOSED
    c_alpha: float = 1.0
    drop_prob: float = 0.0
    protocol_enabled: bool = True
    disturbances: list = field(default_factory=list)
    rounds: int = 0
    round_period: float = 0.5
    control_period: float = 0.01
    dt: float = 0.001
    seed: int = 0
    name: str = "scenario"
    acceptance: dict = field(default_factory=dict)
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.robots) != self.topology.n:
            raise DomainError(f"{len(self.robots)} robots but topology has {self.topology.n} nodes")
        if self.rounds < 0:
            raise DomainError("rounds must be non-negative")
        steps = self.control_period / self.dt
        per_round = self.round_period / self.control_period
        if abs(steps - round(steps)) > 1e-9 or abs(per_round - round(per_round)) > 1e-9:
            raise DomainError("round period, control period and dt must nest in whole steps")
        for d in self.disturbances:
            if not 0 <= d.robot < len(self.robots):
                raise DomainError(f"disturbance targets unknown robot {d.robot}")

    @property
    def steps_per_control(self) -> int:
        return int(round(self.control_period / self.dt))

    @property
    def controls_per_round(self) -> int:
        return int(round(self.round_period / self.control_period))


@dataclass
class RoundLog:
    """Everything recorded during a run.

    Round arrays are indexed by round t (``estimates``/``valid`` have one
    extra final entry); control arrays by control tick.
    """

    n: int
    target: Optional[np.ndarray]
    tank_diagonal: float
    estimates: np.ndarray      # (R+1, n, 3), NaN = no estimate
    valid: np.ndarray          # (R+1, n) bool, membership of S^t
    measurements: np.ndarray   # (R, n, 3), NaN = absent
    gimbal: np.ndarray         # (R, n, 2) pan, tilt at sensing
    control_t: np.ndarray      # (C,) time at the end of each control tick
    nu: np.ndarray             # (C, n, 4)
    zeta: np.ndarray           # (C, n, 4)
    saturated: np.ndarray      # (C, n) bool
    body: np.ndarray           # (C, n, 12) state at the end of each tick
    setpoint: np.ndarray       # (C, n) depth setpoint
    surface: float = 0.0
    round_period: float = 0.5

    @property
    def rounds(self) -> int:
        return self.measurements.shape[0]


def _rng(seed, t, robot, stream):
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, t, robot, stream])


def run_scenario(scenario: Scenario) -> RoundLog:
    """Advance the coupled system ``scenario.rounds`` rounds.

    Each round: physics and depth control over one round period (with
    scheduled pushes applied at their control tick), gimbal aiming at the
    current estimates, valid-set update from the cameras, measurement, and
    one protocol round.
    """
    sc = scenario
    n = len(sc.robots)
    R = sc.rounds
    C = R * sc.controls_per_round
    world = sc.world

    bodies = [list(map(float, r.initial.as_vector())) for r in sc.robots]
    gimbals = [r.gimbal for r in sc.robots]
    for r in sc.robots:
        r.controller.reset()
    pstate = ProtocolState.initial(n)
    schedule = StepSchedule(sc.c_alpha)
    pending = sorted(sc.disturbances, key=lambda d: (d.time, d.robot))

    est = np.full((R + 1, n, 3), np.nan)
    valid = np.zeros((R + 1, n), dtype=bool)
    meas_log = np.full((R, n, 3), np.nan)
    gim_log = np.zeros((R, n, 2))
    ctrl_t = np.zeros(C)
    nu_log = np.zeros((C, n, 4))
    zeta_log = np.zeros((C, n, 4))
    sat_log = np.zeros((C, n), dtype=bool)
    body_log = np.zeros((C, n, 12))
    sp_log = np.zeros((C, n))

    tick = 0
    for t in range(R):
        try:
            rngs = [_rng(sc.seed, t, i, STREAM_PRESSURE) for i in range(n)]
            for _ in range(sc.controls_per_round):
                now = tick * sc.control_period
                while pending and pending[0].time <= now + 1e-9:
                    d = pending.pop(0)
                    spec = sc.robots[d.robot]
                    pushed = apply_disturbance(RigidBodyState.from_vector(bodies[d.robot]), spec.params, d.impulse, d.torque_impulse)
                    bodies[d.robot] = list(map(float, pushed.as_vector()))
                for i, spec in enumerate(sc.robots):
                    spec.controller.target_depth = spec.depth_setpoint(now)
                    out = control_step(spec.controller, spec.pressure, spec.params,
                                       RigidBodyState.from_vector(bodies[i]), sc.control_period,
                                       rngs[i], world.surface)
                    bodies[i] = integrate(spec.params, bodies[i], out.command.nu, sc.dt, sc.steps_per_control)
                    nu_log[tick, i] = out.command.nu
                    zeta_log[tick, i] = out.zeta
                    sat_log[tick, i] = out.command.saturated
                    body_log[tick, i] = bodies[i]
                    sp_log[tick, i] = spec.controller.target_depth
                ctrl_t[tick] = (tick + 1) * sc.control_period
                tick += 1

            states = [RigidBodyState.from_vector(b) for b in bodies]
            for i in range(n):
                if pstate.has_estimate[i]:
                    gimbals[i] = aim_gimbal(gimbals[i], states[i], pstate.estimates[i], sc.round_period)
                gim_log[t, i] = (gimbals[i].pan, gimbals[i].tilt)

            measurements = {}
            if sc.protocol_enabled and world.target is not None:
                for i, spec in enumerate(sc.robots):
                    rig = spec.camera.rig(camera_extrinsics(states[i], gimbals[i]))
                    m = measure(world, rig, sc.noise, _rng(sc.seed, t, i, STREAM_MEASURE))
                    if m is not None:
                        measurements[i] = m
                        meas_log[t, i] = m

            pstate = pstate.with_valid_set(measurements.keys())
            est[t] = pstate.estimates
            valid[t] = [i in pstate.valid_set for i in range(n)]
            dropped = draw_dropped_edges(sc.topology, sc.drop_prob, _rng(sc.seed, t, n, STREAM_DROP))
            pstate = protocol_round(pstate, sc.topology, sc.weights, schedule, measurements, dropped)
            # a robot that joined without an estimate was initialised from its measurement
        except UwlocError as exc:
            raise SimulationError(t, exc) from exc

    est[R] = pstate.estimates
    valid[R] = valid[R - 1] if R > 0 else False
    return RoundLog(
        n=n,
        target=None if world.target is None else np.array(world.target),
        tank_diagonal=world.diagonal,
        estimates=est,
        valid=valid,
        measurements=meas_log,
        gimbal=gim_log,
        control_t=ctrl_t,
        nu=nu_log,
        zeta=zeta_log,
        saturated=sat_log,
        body=body_log,
        setpoint=sp_log,
        surface=world.surface,
        round_period=sc.round_period,
    )


def pressure_mix(zeta) -> np.ndarray:
    """``A @ zeta`` for logged readings of shape (..., 4)."""
    return np.asarray(zeta) @ ALLOCATION.T
