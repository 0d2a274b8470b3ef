"""Pressure-based depth and attitude hold.

Four pressure sensors at the body corners read water depth (positive
downward). Mixing them with the thruster pattern matrix

    A = [[ 1, 1,  1,  1],     # total
         [ 1, 1, -1, -1],     # roll
         [-1, 1,  1, -1]]     # pitch

gives ``mu = A @ zeta``, which equals ``[4 z*, 0, 0]`` when the robot is
level at target depth ``z*``. The feedback ``U`` is applied to squared
thruster speeds on top of the hover feed-forward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .dynamics import RigidBodyState, RobotParams, rotation_matrix
from .errors import DomainError

ALLOCATION = np.array([[1.0, 1.0, 1.0, 1.0], [1.0, 1.0, -1.0, -1.0], [-1.0, 1.0, 1.0, -1.0]])
# closes the fourth degree of freedom: no thrust asymmetry along the diagonals
CLOSURE = np.array([1.0, -1.0, 1.0, -1.0])
_SYSTEM = np.vstack([ALLOCATION, CLOSURE])


@dataclass(frozen=True)
class PressureArray:
    offsets: np.ndarray
    sigma: float = 0.001

    def __post_init__(self):
        off = np.array(self.offsets, dtype=float)
        if off.shape != (4, 3):
            raise DomainError("four 3-D sensor offsets expected")
        if not np.allclose(off.sum(axis=0), 0.0, atol=1e-12):
            raise DomainError("sensor placement must be symmetric about the body origin")
        if self.sigma < 0:
            raise DomainError("sensor noise must be non-negative")
        off.setflags(write=False)
        object.__setattr__(self, "offsets", off)

    @classmethod
    def corners(cls, a: float, b: float, sigma: float = 0.001) -> "PressureArray":
        """Sensor k sits next to thruster k."""
        return cls(np.array([[a, b, 0.0], [-a, b, 0.0], [-a, -b, 0.0], [a, -b, 0.0]]), sigma)


def sense_pressure(array: PressureArray, state: RigidBodyState, surface: float, rng=None) -> np.ndarray:
    """Depth below ``surface`` of each sensor, plus Gaussian noise."""
    R = rotation_matrix(state.attitude)
    heights = state.position[2] + array.offsets @ R[2]
    zeta = surface - heights
    if array.sigma > 0:
        if rng is None:
            raise DomainError("a random generator is required when sensor noise is on")
        zeta = zeta + rng.normal(0.0, array.sigma, 4)
    return zeta


@dataclass
class PIController:
    """PI law on ``e = mu - [4 z*, 0, 0]`` with optional rate damping.

    ``kd`` acts on the low-pass filtered rate of ``mu`` (time constant
    ``rate_filter``); ``kd = 0`` is the plain PI controller. The integral is
    clamped per channel to ``+-windup``.
    """

    kp: np.ndarray
    ki: np.ndarray
    target_depth: float
    windup: np.ndarray
    kd: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rate_filter: float = 0.02
    integral: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rate: np.ndarray = field(default_factory=lambda: np.zeros(3))
    last_mu: np.ndarray | None = None

    def __post_init__(self):
        self.kp = np.array(self.kp, dtype=float).reshape(3)
        self.ki = np.array(self.ki, dtype=float).reshape(3)
        self.kd = np.array(self.kd, dtype=float).reshape(3)
        self.windup = np.broadcast_to(np.array(self.windup, dtype=float), (3,)).copy()
        self.integral = np.array(self.integral, dtype=float).reshape(3)
        self.rate = np.array(self.rate, dtype=float).reshape(3)
        if min(self.kp.min(), self.ki.min(), self.kd.min()) < 0:
            raise DomainError("controller gains must be non-negative")
        if np.any(self.windup < 0) or self.rate_filter < 0:
            raise DomainError("windup bound and filter constant must be non-negative")

    @classmethod
    def tuned(cls, params: RobotParams, target_depth: float, depth_bandwidth: float = 6.0,
              attitude_bandwidth: float = 10.0, **kw) -> "PIController":
        """Gains placing a triple closed-loop pole at each bandwidth (rad/s).

        Each channel is linearised to ``x'' = -G (kp x + ki int x + kd x')``.
        """
        K = params.thrust_coeff
        Ix, Iy, _ = params.inertia
        gains = [4 * K / params.mass, 4 * K * params.arm_b**2 / Ix, 4 * K * params.arm_a**2 / Iy]
        omegas = [depth_bandwidth, attitude_bandwidth, attitude_bandwidth]
        kp = np.array([3 * w * w / G for w, G in zip(omegas, gains)])
        ki = np.array([w**3 / G for w, G in zip(omegas, gains)])
        kd = np.array([3 * w / G for w, G in zip(omegas, gains)])
        return cls(kp=kp, ki=ki, kd=kd, target_depth=target_depth, windup=default_windup(params, ki), **kw)

    def setpoint(self) -> np.ndarray:
        return np.array([4.0 * self.target_depth, 0.0, 0.0])

    def reset(self):
        self.integral[:] = 0.0
        self.rate[:] = 0.0
        self.last_mu = None


def default_windup(params: RobotParams, ki) -> np.ndarray:
    """Integral bound letting the I-term supply at most twice the hover demand."""
    ki = np.asarray(ki, dtype=float)
    demand = 2.0 * params.weight / params.thrust_coeff
    with np.errstate(divide="ignore"):
        return np.where(ki > 0, demand / ki, 0.0)


def pi_update(controller: PIController, mu, dt: float) -> np.ndarray:
    if not dt > 0:
        raise DomainError("dt must be positive")
    mu = np.asarray(mu, dtype=float).reshape(3)
    e = mu - controller.setpoint()
    controller.integral = np.clip(controller.integral + e * dt, -controller.windup, controller.windup)
    if controller.last_mu is not None:
        raw = (mu - controller.last_mu) / dt
        blend = dt / (controller.rate_filter + dt)
        controller.rate = controller.rate + blend * (raw - controller.rate)
    controller.last_mu = mu
    return controller.kp * e + controller.ki * controller.integral + controller.kd * controller.rate


class ThrusterCommand(NamedTuple):
    nu: np.ndarray
    saturated: bool


def allocate(params: RobotParams, u_att, depth_channel: float) -> ThrusterCommand:
    """Squared speeds realising hover + depth correction and roll/pitch demand.

    When the exact solution leaves ``[0, nu_max^2]`` the collective is
    shifted first so the attitude differential survives; if no shift fits,
    speeds are clipped. Either case sets ``saturated``.
    """
    u_att = np.asarray(u_att, dtype=float).reshape(2)
    total = params.weight / params.thrust_coeff + float(depth_channel)
    rhs = np.array([total, u_att[0], u_att[1], 0.0])
    # _SYSTEM @ _SYSTEM.T == 4 I
    nu_sq = _SYSTEM.T @ rhs / 4.0
    cap = params.nu_max**2
    saturated = False
    if nu_sq.min() < 0.0 or nu_sq.max() > cap:
        saturated = True
        diff = nu_sq - total / 4.0
        lo, hi = -diff.min(), cap - diff.max()
        if lo <= hi:
            nu_sq = diff + min(max(total / 4.0, lo), hi)
        nu_sq = np.clip(nu_sq, 0.0, cap)
    return ThrusterCommand(np.sqrt(nu_sq), saturated)


class ControlOutput(NamedTuple):
    command: ThrusterCommand
    zeta: np.ndarray
    u: np.ndarray


def control_step(controller: PIController, array: PressureArray, params: RobotParams,
                 state: RigidBodyState, dt: float, rng=None, surface: float = 0.0) -> ControlOutput:
    """Sense, mix, run the PI law and allocate one control period."""
    zeta = sense_pressure(array, state, surface, rng)
    u = pi_update(controller, ALLOCATION @ zeta, dt)
    return ControlOutput(allocate(params, u[1:], u[0]), zeta, u)


def attitude_from_pressure(array: PressureArray, zeta) -> tuple:
    """Small-angle (roll, pitch) recovered from the sensor differentials."""
    mu = ALLOCATION @ np.asarray(zeta, dtype=float)
    a = abs(array.offsets[0, 0])
    b = abs(array.offsets[0, 1])
    roll = -math.asin(max(-1.0, min(1.0, mu[1] / (4 * b))))
    pitch = -math.asin(max(-1.0, min(1.0, mu[2] / (4 * a))))
    return roll, pitch
