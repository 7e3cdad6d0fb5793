"""Apex-triggered update laws for the touch-down leg angle and the VP angle."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import SimulationFailure
from .model import VpTarget
from .sim import LEG_RANGE, VP_RANGE, Controls

# endpoints of the speed-gain schedule: (drop, k_xd, k_xd0 / k_xd)
SCHEDULE = ((-0.10, 0.25, 0.5), (-0.40, 0.20, 0.3))
VP_WINDOW = 0.5   # allowed |theta_vp + pi|


@dataclass(frozen=True)
class ControllerGains:
    k_xd: float = 0.25       # rad s/m, on the step-to-step speed change
    k_xd0: float = 0.125     # rad s/m, on the error to the reference speed
    k_vp: float = 0.0        # VP angle per rad of mean trunk-angle error, see README
    theta_des: float = 0.0   # rad, desired mean trunk angle
    xd_des: float = 5.0      # m/s
    rate_lookahead: float = 0.0  # s, optional: adds tau * (thetad_apex - ref) to the measured angle
    thetad_ref: float = 0.0

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not math.isfinite(v):
                raise ValueError(f"gain {k} must be finite")


def scheduled_speed_gains(dz):
    """Speed gains for a drop of ``dz`` metres, linear between the two schedule endpoints."""
    (z1, k1, r1), (z2, k2, r2) = SCHEDULE
    f = min(max((dz - z1) / (z2 - z1), 0.0), 1.0)
    k = k1 + f * (k2 - k1)
    return k, (r1 + f * (r2 - r1)) * k


def gains_for_drop(dz, base_gains):
    k, k0 = scheduled_speed_gains(dz)
    return replace(base_gains, k_xd=k, k_xd0=k0)


@dataclass
class ControlState:
    theta_td: float
    theta_vp: float
    xd_ref: float
    xd_prev: float
    mean_theta: float
    excursion: float = 0.0


def leg_angle_update(ctrl, gains, xd_ref, xd_prev, xd_now):
    th = ctrl.theta_td + gains.k_xd0 * (xd_now - xd_ref) + gains.k_xd * (xd_now - xd_prev)
    if not 0.0 < th < math.pi:
        raise SimulationFailure(LEG_RANGE, f"leg angle out of range: {th}")
    return th


def vp_angle_update(ctrl, gains, mean_theta):
    th = ctrl.theta_vp + gains.k_vp * (gains.theta_des - mean_theta)
    if abs(th + math.pi) >= VP_WINDOW or not math.isfinite(th):
        raise SimulationFailure(VP_RANGE, f"VP angle out of range: {th}")
    return th


class ApexController:
    """Leg-angle and VP-angle laws evaluated once per apex, in that order.

    The VP law sees the mean trunk angle of the step that just finished, so a
    perturbation inside a step is invisible to it until the next apex.
    """

    def __init__(self, gains, state, vp=VpTarget()):
        self.gains = gains
        self.state = state
        self.vp = vp
        self.history = []

    def controls(self, apex, last):
        st, g = self.state, self.gains
        xd_now = float(apex[3])
        if last is not None:
            st.theta_td = leg_angle_update(st, g, st.xd_ref, st.xd_prev, xd_now)
            measured = last.theta_mean + g.rate_lookahead * (float(apex[5]) - g.thetad_ref)
            st.theta_vp = vp_angle_update(st, g, measured)
            st.mean_theta = last.theta_mean
            st.excursion = last.excursion
        st.xd_prev = xd_now
        self.history.append((st.theta_td, st.theta_vp))
        return Controls(st.theta_td, self.vp.with_angle(st.theta_vp))
