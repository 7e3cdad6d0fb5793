"""TSLIP model: a point-mass trunk with inertia, a massless spring-damper leg
and a hip torque that steers the ground reaction force through a virtual point.

Conventions
-----------
Planar world frame, x forward, z up. Trunk angle theta is counterclockwise
positive with 0 meaning upright. The hip sits ``r_hc`` below the CoM along
the trunk axis. The leg angle is measured at the foot from the positive x
axis to the foot->hip vector, so a vertical leg has angle pi/2 and a foot
planted ahead of the hip has an angle above pi/2.

States are length-6 sequences ``(x, z, theta, xd, zd, thetad)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import GeometryError, PhaseError

VERTICAL = "vertical"
TRUNK = "trunk"

DEGENERATE_LEG = 1e-9
PERPENDICULAR_TOL = 1e-9
REST_TOL = 1e-12


@dataclass(frozen=True)
class ModelParams:
    m: float = 80.0       # kg
    J: float = 5.0        # kg m^2
    k: float = 18000.0    # N/m
    c: float = 680.0      # N s/m^2, bilinear damper
    l0: float = 1.0       # m
    r_hc: float = 0.1     # m, hip below CoM
    g: float = 9.81

    def __post_init__(self):
        for name in ("m", "J", "k", "l0", "r_hc", "g"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and > 0, got {v!r}")
        if not (math.isfinite(self.c) and self.c >= 0):
            raise ValueError(f"c must be finite and >= 0, got {self.c!r}")

    @property
    def weight(self):
        return self.m * self.g

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class VpTarget:
    """Commanded virtual point, polar about the CoM.

    The point sits at ``CoM + radius * (-sin a, cos a)`` with ``a = angle``
    in the vertical-aligned frame and ``a = theta + angle`` in the
    trunk-fixed frame. The default is 0.3 m straight below the CoM.
    """

    radius: float = 0.30
    angle: float = -math.pi
    frame: str = VERTICAL

    def __post_init__(self):
        if not (math.isfinite(self.radius) and self.radius >= 0):
            raise ValueError("VP radius must be >= 0")
        if not math.isfinite(self.angle):
            raise ValueError("VP angle must be finite")
        if self.frame not in (VERTICAL, TRUNK):
            raise ValueError(f"unknown VP frame {self.frame!r}")

    def offset(self, theta):
        a = self.angle + (theta if self.frame == TRUNK else 0.0)
        return -self.radius * math.sin(a), self.radius * math.cos(a)

    def with_angle(self, angle):
        return VpTarget(self.radius, angle, self.frame)


@dataclass(frozen=True)
class ComState:
    x: float
    z: float
    theta: float
    xd: float = 0.0
    zd: float = 0.0
    thetad: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.as_array()):
            raise ValueError("state must be finite")

    def as_array(self):
        return np.array([self.x, self.z, self.theta, self.xd, self.zd, self.thetad])

    @classmethod
    def from_array(cls, s):
        return cls(*(float(v) for v in s[:6]))


@dataclass(frozen=True)
class StanceGeometry:
    foot: np.ndarray
    hip: np.ndarray
    hip_velocity: np.ndarray
    r_fh: np.ndarray
    r_fc: np.ndarray
    length: float
    rate: float
    angle: float
    axis: np.ndarray = field(repr=False)
    normal: np.ndarray = field(repr=False)


def hip_position(state, params):
    x, z, th = state[0], state[1], state[2]
    return x + params.r_hc * math.sin(th), z - params.r_hc * math.cos(th)


def hip_velocity(state, params):
    th, xd, zd, w = state[2], state[3], state[4], state[5]
    return xd + params.r_hc * math.cos(th) * w, zd + params.r_hc * math.sin(th) * w


def _as_tuple(state):
    if isinstance(state, ComState):
        return tuple(state.as_array())
    return tuple(float(v) for v in state[:6])


def leg_geometry(state, foot, params):
    s = _as_tuple(state)
    fx, fz = float(foot[0]), float(foot[1])
    hx, hz = hip_position(s, params)
    hvx, hvz = hip_velocity(s, params)
    rx, rz = hx - fx, hz - fz
    length = math.hypot(rx, rz)
    if length < DEGENERATE_LEG:
        raise GeometryError("foot coincides with hip")
    ux, uz = rx / length, rz / length
    return StanceGeometry(
        foot=np.array([fx, fz]),
        hip=np.array([hx, hz]),
        hip_velocity=np.array([hvx, hvz]),
        r_fh=np.array([rx, rz]),
        r_fc=np.array([s[0] - fx, s[1] - fz]),
        length=length,
        rate=hvx * ux + hvz * uz,
        angle=math.atan2(rz, rx),
        axis=np.array([ux, uz]),
        normal=np.array([-uz, ux]),
    )


def _cross(a, b):
    return a[0] * b[1] - a[1] * b[0]


def axial_force_magnitude(length, rate, params):
    """Signed axial force, positive when pushing the hip away from the foot."""
    dl = length - params.l0
    return -(params.k * dl - params.c * rate * dl)


def axial_grf(geom, params):
    if geom.length > params.l0 + REST_TOL:
        raise PhaseError("axial GRF requested with the leg longer than rest length")
    return axial_force_magnitude(geom.length, geom.rate, params) * geom.axis


def vp_point(state, vp):
    s = _as_tuple(state)
    ox, oz = vp.offset(s[2])
    return np.array([s[0] + ox, s[1] + oz])


def hip_torque_for_vp(geom, axial, vp, state):
    """Hip torque that rotates the GRF onto the foot->VP line.

    Returned as the torque the trunk applies to the leg, which equals
    ``r_FH x GRF`` for the massless leg.
    """
    r_fv = vp_point(state, vp) - geom.foot
    dot = float(np.dot(geom.r_fh, r_fv))
    if abs(dot) < PERPENDICULAR_TOL:
        raise GeometryError("VP perpendicular to leg")
    fa = float(np.dot(axial, geom.axis))
    return fa * geom.length * _cross(geom.r_fh, r_fv) / dot


def tangential_grf(tau, geom):
    th = geom.angle
    return (-tau / geom.length) * np.array([math.sin(th), -math.cos(th)])


def stance_derivatives(state, foot, params, vp):
    s = _as_tuple(state)
    geom = leg_geometry(s, foot, params)
    fa = axial_grf(geom, params)
    ft = tangential_grf(hip_torque_for_vp(geom, fa, vp, s), geom)
    f = fa + ft
    thdd = -_cross(geom.r_fc, f) / params.J
    return np.array([s[3], s[4], s[5], f[0] / params.m, f[1] / params.m - params.g, thdd])


def flight_derivatives(state, params):
    s = _as_tuple(state)
    return np.array([s[3], s[4], s[5], 0.0, -params.g, 0.0])


def stance_kernel(s, fx, fz, params, vp):
    """Scalar fast path used by the integrator.

    Returns ``(Fx, Fz, tau, length, rate, leg_rate)`` where ``leg_rate`` is
    the angular velocity of the foot->hip vector. Matches the composition of
    the public operations above.
    """
    x, z, th, xd, zd, w = s[0], s[1], s[2], s[3], s[4], s[5]
    rhc = params.r_hc
    sn, cs = math.sin(th), math.cos(th)
    rx, rz = x + rhc * sn - fx, z - rhc * cs - fz
    hvx, hvz = xd + rhc * cs * w, zd + rhc * sn * w
    length = math.sqrt(rx * rx + rz * rz)
    if length < DEGENERATE_LEG:
        raise GeometryError("foot coincides with hip")
    ux, uz = rx / length, rz / length
    rate = hvx * ux + hvz * uz
    dl = length - params.l0
    fa = -(params.k * dl - params.c * rate * dl)
    a = vp.angle + (th if vp.frame == TRUNK else 0.0)
    vx = x - vp.radius * math.sin(a) - fx
    vz = z + vp.radius * math.cos(a) - fz
    dot = rx * vx + rz * vz
    if abs(dot) < PERPENDICULAR_TOL:
        raise GeometryError("VP perpendicular to leg")
    ft = fa * (rx * vz - rz * vx) / dot
    leg_rate = (rx * hvz - rz * hvx) / (length * length)
    return fa * ux - ft * uz, fa * uz + ft * ux, ft * length, length, rate, leg_rate


def mechanical_energy(s, params):
    return (0.5 * params.m * (s[3] ** 2 + s[4] ** 2) + 0.5 * params.J * s[5] ** 2
            + params.m * params.g * s[1])


def spring_energy(length, params):
    return 0.5 * params.k * (length - params.l0) ** 2
