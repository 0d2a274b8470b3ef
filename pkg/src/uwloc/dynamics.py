"""Rigid-body model of one robot driven by four vertical central thrusters.

World frame is Z-up. Body frame has thrusters at (x, y) = (+a, +b), (-a, +b),
(-a, -b), (+a, -b) for thrusters 1..4; each pushes along body +Z with force
``K * nu**2``. Drag is quadratic, ``k * v * |v|``, per world axis.

The state vector is ``[x, y, z, roll, pitch, yaw, vx, vy, vz, droll, dpitch,
dyaw]``; angular rates are Euler-angle rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, GimbalLockError

HALF_PI = math.pi / 2


@dataclass(frozen=True)
class RobotParams:
    mass: float = 3.0
    gravity: float = 9.81
    drag: tuple = (15.0, 15.0, 40.0)
    thrust_coeff: float = 3.0 * 9.81 / 4.0e4
    inertia: tuple = (0.0225, 0.0225, 0.045)
    arm_a: float = 0.12
    arm_b: float = 0.12
    nu_max: float = 200.0
    buoyancy: float = 0.0
    rot_damping: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "drag", tuple(float(v) for v in self.drag))
        object.__setattr__(self, "inertia", tuple(float(v) for v in self.inertia))
        if len(self.drag) != 3 or len(self.inertia) != 3:
            raise DomainError("drag and inertia need three components")
        positive = [self.mass, self.gravity, self.thrust_coeff, self.arm_a, self.arm_b, self.nu_max, *self.inertia]
        if min(positive) <= 0 or min(self.drag) < 0 or self.rot_damping < 0:
            raise DomainError("robot parameters must be positive")

    @property
    def weight(self) -> float:
        """Net downward force at rest (gravity minus buoyancy)."""
        return self.mass * self.gravity - self.buoyancy

    @property
    def hover_nu_sq(self) -> float:
        return self.weight / (4.0 * self.thrust_coeff)

    def _packed(self):
        return (
            self.mass, self.gravity - self.buoyancy / self.mass, *self.drag, self.thrust_coeff,
            *self.inertia, self.arm_a, self.arm_b, self.rot_damping,
        )


@dataclass(frozen=True)
class RigidBodyState:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    attitude: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rates: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("position", "attitude", "velocity", "rates"):
            v = np.array(getattr(self, name), dtype=float).reshape(3)
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if not np.all(np.isfinite(self.attitude)):
            raise DomainError("attitude must be finite")
        if abs(self.attitude[1]) >= HALF_PI:
            raise GimbalLockError(f"pitch {self.attitude[1]:.6g} at or beyond +-pi/2")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.attitude, self.velocity, self.rates])

    @classmethod
    def from_vector(cls, v) -> "RigidBodyState":
        v = np.asarray(v, dtype=float)
        return cls(v[0:3], v[3:6], v[6:9], v[9:12])


def rotation_matrix(attitude) -> np.ndarray:
    """Body-to-world rotation, Z-Y-X composition ``Rz(yaw) Ry(pitch) Rx(roll)``."""
    phi, th, psi = (float(a) for a in attitude)
    if abs(th) >= HALF_PI:
        raise GimbalLockError(f"pitch {th:.6g} at or beyond +-pi/2")
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(th), math.sin(th)
    cp, sp = math.cos(psi), math.sin(psi)
    return np.array(
        [
            [cp * ct, cp * st * sf - sp * cf, cf * st * cp + sf * sp],
            [sp * ct, sp * st * sf + cp * cf, cf * st * sp - sf * cp],
            [-st, ct * sf, cf * ct],
        ]
    )


def _deriv(p, s, w):
    # p: packed params, s: 12 floats, w: 4 squared speeds
    m, g_eff, kx, ky, kz, K, Ix, Iy, Iz, a, b, cr = p
    phi, th, psi = s[3], s[4], s[5]
    vx, vy, vz = s[6], s[7], s[8]
    dp, dq, dr = s[9], s[10], s[11]
    w1, w2, w3, w4 = w
    thrust = K * (w1 + w2 + w3 + w4)
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(th), math.sin(th)
    cp, sp = math.cos(psi), math.sin(psi)
    ax = (thrust * (cf * st * cp + sf * sp) - kx * vx * abs(vx)) / m
    ay = (thrust * (cf * st * sp - sf * cp) - ky * vy * abs(vy)) / m
    az = (thrust * cf * ct - kz * vz * abs(vz)) / m - g_eff
    roll_torque = K * (w1 + w2 - w3 - w4) * b
    pitch_torque = K * (-w1 + w2 + w3 - w4) * a
    ddp = (roll_torque - (Iz - Iy) * dq * dr - cr * dp) / Ix
    ddq = (pitch_torque - (Ix - Iz) * dp * dr - cr * dq) / Iy
    ddr = (-(Iy - Ix) * dp * dq - cr * dr) / Iz
    return (vx, vy, vz, dp, dq, dr, ax, ay, az, ddp, ddq, ddr)


def _check_command(params: RobotParams, nu):
    nu = [float(v) for v in nu]
    if len(nu) != 4:
        raise DomainError("four thruster speeds expected")
    if min(nu) < 0 or max(nu) > params.nu_max:
        raise DomainError(f"thruster speeds {nu} outside [0, {params.nu_max}]")
    return tuple(v * v for v in nu)


def derivatives(params: RobotParams, state: RigidBodyState, nu) -> np.ndarray:
    """Time derivative of the 12-element state vector."""
    w = _check_command(params, nu)
    return np.array(_deriv(params._packed(), tuple(state.as_vector()), w))


def _rk4(p, s, w, dt):
    k1 = _deriv(p, s, w)
    h = 0.5 * dt
    k2 = _deriv(p, [x + h * d for x, d in zip(s, k1)], w)
    k3 = _deriv(p, [x + h * d for x, d in zip(s, k2)], w)
    k4 = _deriv(p, [x + dt * d for x, d in zip(s, k3)], w)
    c = dt / 6.0
    out = [x + c * (d1 + 2.0 * d2 + 2.0 * d3 + d4) for x, d1, d2, d3, d4 in zip(s, k1, k2, k3, k4)]
    if not abs(out[4]) < HALF_PI:
        raise GimbalLockError(f"pitch reached {out[4]:.6g}")
    return out


def integrate(params: RobotParams, vector, nu, dt: float, steps: int = 1) -> list:
    """Advance a raw state vector ``steps`` RK4 steps under a held command."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    w = _check_command(params, nu)
    p = params._packed()
    s = [float(v) for v in vector]
    for _ in range(steps):
        s = _rk4(p, s, w, dt)
    return s


def rk4_step(params: RobotParams, state: RigidBodyState, nu, dt: float) -> RigidBodyState:
    return RigidBodyState.from_vector(integrate(params, state.as_vector(), nu, dt, 1))


def hover_command(params: RobotParams) -> np.ndarray:
    return np.full(4, math.sqrt(params.hover_nu_sq))
