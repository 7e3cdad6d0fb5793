import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from vpsim.control import (ApexController, ControllerGains, ControlState, leg_angle_update,
                           scheduled_speed_gains, vp_angle_update)
from vpsim.errors import SimulationFailure
from vpsim.experiments import base_controller


def state(theta_td=1.1519, theta_vp=-math.pi):
    return ControlState(theta_td=theta_td, theta_vp=theta_vp, xd_ref=5.0, xd_prev=5.0,
                        mean_theta=0.0)


def test_leg_angle_equilibrium():
    assert leg_angle_update(state(), ControllerGains(), 5.0, 5.0, 5.0) == 1.1519


def test_leg_angle_hand_arithmetic():
    g = ControllerGains(k_xd=0.25, k_xd0=0.125)
    # now - ref = 0.2, now - prev = 0.1
    th = leg_angle_update(state(), g, 5.0, 5.1, 5.2)
    assert th == pytest.approx(1.1519 + 0.025 + 0.025, abs=1e-15)


@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_leg_angle_linear_and_symmetric(a, b):
    g = ControllerGains()
    up = leg_angle_update(state(), g, 5.0, 5.0 - b, 5.0 + a) - 1.1519
    down = leg_angle_update(state(), g, 5.0, 5.0 + b, 5.0 - a) - 1.1519
    assert up == pytest.approx(-down, abs=1e-12)
    assert up == pytest.approx(0.125 * a + 0.25 * (a + b), abs=1e-12)


def test_leg_angle_range():
    with pytest.raises(SimulationFailure) as ei:
        leg_angle_update(state(theta_td=3.1), ControllerGains(k_xd0=1.0), 5.0, 5.0, 6.0)
    assert ei.value.kind == "leg_angle_out_of_range"


def test_vp_zero_error():
    g = ControllerGains(k_vp=0.5, theta_des=-0.2)
    assert vp_angle_update(state(), g, -0.2) == -math.pi


def test_vp_hand_arithmetic():
    g = ControllerGains(k_vp=0.5, theta_des=0.02)
    assert vp_angle_update(state(), g, 0.0) == pytest.approx(-math.pi + 0.01, abs=1e-15)


def test_vp_updates_accumulate_linearly():
    g = ControllerGains(k_vp=0.5, theta_des=0.02)
    s = state()
    s.theta_vp = vp_angle_update(s, g, 0.0)
    s.theta_vp = vp_angle_update(s, g, 0.0)
    assert s.theta_vp == pytest.approx(-math.pi + 0.02, abs=1e-15)


@given(st.floats(-0.2, 0.2))
def test_vp_doubling(err):
    g = ControllerGains(k_vp=0.7, theta_des=0.0)
    one = vp_angle_update(state(), g, -err) + math.pi
    two = vp_angle_update(state(), g, -2 * err) + math.pi
    assert two == pytest.approx(2 * one, abs=1e-12)


def test_vp_range():
    with pytest.raises(SimulationFailure):
        vp_angle_update(state(), ControllerGains(k_vp=10.0), 1.0)


def test_schedule_endpoints_and_midpoint():
    assert scheduled_speed_gains(-0.10) == pytest.approx((0.25, 0.125))
    assert scheduled_speed_gains(-0.40) == pytest.approx((0.20, 0.06))
    k, k0 = scheduled_speed_gains(-0.25)
    assert k == pytest.approx(0.225)
    assert k0 == pytest.approx(0.4 * 0.225)
    assert scheduled_speed_gains(0.0) == scheduled_speed_gains(-0.1)


def test_base_gait_is_controller_fixed_point(base):
    ctl = base_controller(base, ControllerGains(k_vp=0.5, rate_lookahead=0.3))
    c0 = ctl.controls(base.apex, None)
    c1 = ctl.controls(base.step.apex_out, base.step)
    assert abs(c1.theta_td - c0.theta_td) < 1e-9
    assert abs(c1.vp.angle - c0.vp.angle) < 1e-9


def test_vp_blind_within_step(base):
    # the first controls of a run use base values whatever happens in step 0
    ctl = base_controller(base, ControllerGains(k_vp=0.5))
    c0 = ctl.controls(base.apex, None)
    assert c0.vp.angle == base.vp.angle and c0.theta_td == base.theta_td


def test_update_order_leg_then_vp(base):
    ctl = base_controller(base, ControllerGains(k_vp=0.5))
    ctl.controls(base.apex, None)
    apex = base.step.apex_out.copy()
    apex[3] += 0.1
    c = ctl.controls(apex, base.step)
    assert c.theta_td == pytest.approx(base.theta_td + 0.125 * 0.1 + 0.25 * 0.1)
    assert c.vp.angle == pytest.approx(base.vp.angle, abs=1e-9)
    assert isinstance(ctl, ApexController)
