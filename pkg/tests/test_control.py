import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uwloc.control import (
    ALLOCATION,
    PIController,
    PressureArray,
    allocate,
    attitude_from_pressure,
    control_step,
    pi_update,
    sense_pressure,
)
from uwloc.dynamics import RigidBodyState, RobotParams, integrate
from uwloc.errors import DomainError

P = RobotParams()
SURFACE = 0.5
ARRAY = PressureArray.corners(P.arm_a, P.arm_b, sigma=0.0)


def at_depth(depth, attitude=(0, 0, 0)):
    return RigidBodyState(position=[0.5, 0.5, SURFACE - depth], attitude=attitude)


def test_level_robot_reads_its_depth():
    zeta = sense_pressure(ARRAY, at_depth(0.3), SURFACE)
    assert np.allclose(zeta, 0.3, atol=1e-15)
    assert np.allclose(ALLOCATION @ zeta, [1.2, 0, 0], atol=1e-15)


def test_roll_shows_in_differential_only():
    phi = 0.1
    zeta = sense_pressure(ARRAY, at_depth(0.3, (phi, 0, 0)), SURFACE)
    mu = ALLOCATION @ zeta
    # positive roll lifts the +y sensors
    assert mu[1] == pytest.approx(-4 * P.arm_b * math.sin(phi), rel=1e-12)
    assert mu[0] == pytest.approx(1.2, abs=1e-12)
    assert mu[2] == pytest.approx(0.0, abs=1e-12)
    roll, pitch = attitude_from_pressure(ARRAY, zeta)
    assert roll == pytest.approx(phi, rel=1e-12)
    assert pitch == pytest.approx(0.0, abs=1e-12)


def test_pressure_noise_requires_rng():
    noisy = PressureArray.corners(0.1, 0.1, sigma=0.001)
    with pytest.raises(DomainError):
        sense_pressure(noisy, at_depth(0.3), SURFACE)
    z = sense_pressure(noisy, at_depth(0.3), SURFACE, np.random.default_rng(0))
    assert np.all(np.abs(z - 0.3) < 0.01)


def test_asymmetric_sensors_rejected():
    with pytest.raises(DomainError):
        PressureArray(np.ones((4, 3)))


def plain(kp, ki, target=0.0, windup=1e9):
    return PIController(kp=kp, ki=ki, target_depth=target, windup=windup)


def test_pi_update_examples():
    c = plain([0, 0, 0], [0, 0, 0])
    assert np.array_equal(pi_update(c, [0, 0, 0], 0.01), np.zeros(3))
    c = plain([2, 1, 1], [0, 0, 0])
    assert np.allclose(pi_update(c, [0.4, 0, 0], 0.01), [0.8, 0, 0])
    c = plain([0, 0, 0], [1, 1, 1])
    e = np.array([0.2, -0.1, 0.3])
    pi_update(c, e, 0.5)
    assert np.allclose(pi_update(c, e, 0.5), e)


def test_pi_error_is_relative_to_setpoint():
    c = plain([1, 1, 1], [0, 0, 0], target=0.3)
    assert np.allclose(pi_update(c, [1.2, 0, 0], 0.01), 0.0)


def test_pi_rejects_bad_dt_and_gains():
    with pytest.raises(DomainError):
        pi_update(plain([1, 1, 1], [0, 0, 0]), [0, 0, 0], 0.0)
    with pytest.raises(DomainError):
        plain([-1, 1, 1], [0, 0, 0])


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=40))
def test_integral_never_exceeds_windup(errors):
    c = PIController(kp=[1, 1, 1], ki=[1, 1, 1], target_depth=0.0, windup=[0.5, 0.2, 0.1])
    for e in errors:
        pi_update(c, e, 0.01)
        assert np.all(np.abs(c.integral) <= c.windup)


def test_allocate_hover():
    cmd = allocate(P, [0, 0], 0.0)
    assert np.allclose(cmd.nu**2, P.hover_nu_sq, rtol=1e-14)
    assert not cmd.saturated


def test_allocate_roll_split():
    eps = 250.0
    cmd = allocate(P, [4 * eps, 0], 0.0)
    h = P.hover_nu_sq
    assert np.allclose(cmd.nu**2, [h + eps, h + eps, h - eps, h - eps], rtol=1e-13)


@given(st.floats(-2e4, 2e4), st.floats(-2e4, 2e4), st.floats(-2e4, 2e4))
def test_allocation_consistency(r, p, d):
    cmd = allocate(P, [r, p], d)
    if cmd.saturated:
        return
    mix = ALLOCATION @ cmd.nu**2
    scale = max(1.0, abs(mix).max())
    assert np.allclose(mix, [P.weight / P.thrust_coeff + d, r, p], atol=1e-12 * scale * 10)
    assert abs(cmd.nu[0] ** 2 - cmd.nu[1] ** 2 + cmd.nu[2] ** 2 - cmd.nu[3] ** 2) < 1e-9


@given(st.floats(-5e3, 5e3), st.floats(-5e3, 5e3))
def test_roll_mirror_symmetry(r, d):
    a = allocate(P, [r, 0], d).nu ** 2
    b = allocate(P, [-r, 0], d).nu ** 2
    assert np.allclose(a[[0, 1]], b[[3, 2]], rtol=1e-12)
    assert np.allclose(a[[2, 3]], b[[1, 0]], rtol=1e-12)


def test_large_negative_demand_saturates():
    cmd = allocate(P, [0, 0], -1e6)
    assert cmd.saturated
    assert np.all(cmd.nu == 0.0)


def test_saturation_keeps_attitude_differential():
    cap = P.nu_max**2
    cmd = allocate(P, [8000.0, 0], 1.5e5)
    assert cmd.saturated
    nu_sq = cmd.nu**2
    assert nu_sq.max() <= cap
    assert (nu_sq[0] + nu_sq[1] - nu_sq[2] - nu_sq[3]) == pytest.approx(8000.0, rel=1e-9)


def tuned(target=0.3):
    return PIController.tuned(P, target)


def test_control_step_at_setpoint_hovers():
    out = control_step(tuned(), ARRAY, P, at_depth(0.3), 0.01, surface=SURFACE)
    assert np.allclose(out.command.nu**2, P.hover_nu_sq, rtol=1e-9)


def test_control_step_too_shallow_descends():
    out = control_step(tuned(), ARRAY, P, at_depth(0.2), 0.01, surface=SURFACE)
    nu_sq = out.command.nu**2
    assert nu_sq.sum() < 4 * P.hover_nu_sq
    assert abs(nu_sq[0] + nu_sq[1] - nu_sq[2] - nu_sq[3]) < 1e-6


def test_control_step_too_deep_climbs():
    out = control_step(tuned(), ARRAY, P, at_depth(0.4), 0.01, surface=SURFACE)
    assert (out.command.nu**2).sum() > 4 * P.hover_nu_sq


def test_rolled_robot_gets_opposing_torque():
    out = control_step(tuned(), ARRAY, P, at_depth(0.3, (0.05, 0, 0)), 0.01, surface=SURFACE)
    nu_sq = out.command.nu**2
    roll_torque = nu_sq[0] + nu_sq[1] - nu_sq[2] - nu_sq[3]
    assert roll_torque < 0
    out = control_step(tuned(), ARRAY, P, at_depth(0.3, (0, -0.05, 0)), 0.01, surface=SURFACE)
    nu_sq = out.command.nu**2
    assert -nu_sq[0] + nu_sq[1] + nu_sq[2] - nu_sq[3] > 0


def closed_loop(start_depth, target, seconds, sigma=0.0, attitude=(0, 0, 0), seed=0):
    ctrl = tuned(target)
    arr = PressureArray.corners(P.arm_a, P.arm_b, sigma)
    rng = np.random.default_rng(seed)
    s = list(at_depth(start_depth, attitude).as_vector())
    nus = []
    for _ in range(int(round(seconds / 0.01))):
        out = control_step(ctrl, arr, P, RigidBodyState.from_vector(s), 0.01, rng, SURFACE)
        nus.append(out.command.nu)
        s = integrate(P, s, out.command.nu, 1e-3, 10)
    return s, np.array(nus)


@pytest.mark.parametrize("start", [0.1, 0.3 - 0.2 + 1e-9, 0.45, 0.5 - 0.01])
def test_closed_loop_settles(start):
    s, _ = closed_loop(start, 0.3, 6.0, attitude=(0.02, -0.02, 0))
    assert abs((SURFACE - s[2]) - 0.3) < 0.005
    assert max(abs(s[3]), abs(s[4])) < math.radians(0.5)


def test_commands_are_deterministic():
    _, a = closed_loop(0.25, 0.3, 1.0, sigma=0.001, seed=3)
    _, b = closed_loop(0.25, 0.3, 1.0, sigma=0.001, seed=3)
    assert np.array_equal(a, b)
