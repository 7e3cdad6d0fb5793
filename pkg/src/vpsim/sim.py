"""Event-driven simulation of the hybrid flight/stance system.

One step runs apex -> touch-down -> take-off -> apex. Stance carries extra
quadrature states so that dissipated energy, hip work, impulses and the
trunk-angle integral come straight out of the integrator instead of being
re-integrated from samples.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize_scalar

from .errors import GeometryError, IntegrationError, SimulationFailure
from .model import (ComState, ModelParams, VpTarget, hip_position, mechanical_energy,
                    stance_kernel)

RTOL = 1e-12
ATOL = 1e-12
MAX_PHASE_TIME = 2.0

TOUCH_DOWN = "touch-down"
TAKE_OFF = "take-off"
APEX = "apex"
FAILURE = "failure"

# failure kinds
FELL = "fell"
TENSION = "tension"
NO_APEX = "no_apex"
NO_CLEARANCE = "no_clearance"
TIMEOUT = "phase_timeout"
NON_FINITE = "non_finite"
GEOMETRY = "geometry"
LEG_RANGE = "leg_angle_out_of_range"
VP_RANGE = "vp_angle_out_of_range"

# stance quadrature columns after the 6 mechanical states
AUX = ("damper_loss", "hip_work", "hip_work_pos", "impulse_x", "impulse_z", "theta_integral")


def event(fun, kind, direction=0, terminal=True, armed=True):
    """Tag ``fun(t, y, *args)`` as an event function for :func:`integrate_phase`.

    ``armed=False`` stops the event from firing when it is already zero at
    the start of the phase (take-off at the instant of touch-down).
    """
    fun.kind = kind
    fun.direction = direction
    fun.terminal = terminal
    fun.armed = armed
    return fun


@dataclass(frozen=True)
class TerrainProfile:
    """Piecewise-constant ground: ``level`` before ``drop_step``, ``level + drop`` after."""

    level: float = 0.0
    drop: float = 0.0
    drop_step: int = 0

    def __post_init__(self):
        if self.drop > 0:
            raise ValueError("only step-downs are supported (drop <= 0)")

    def height(self, step):
        return self.level + (self.drop if step >= self.drop_step else 0.0)


@dataclass(frozen=True)
class PhaseEvent:
    kind: str
    time: float
    state: np.ndarray
    residual: float = 0.0


@dataclass
class PhaseTrajectory:
    t0: float
    t1: float
    t: np.ndarray
    y: np.ndarray
    sol: object = None
    watched: dict = field(default_factory=dict)

    def __call__(self, t):
        if self.sol is None:
            y = self.y[:, 0]
            return np.repeat(y[:, None], np.size(t), axis=1) if np.ndim(t) else y.copy()
        return self.sol(t)


def integrate_phase(fun, y0, events, t0=0.0, rtol=RTOL, atol=ATOL,
                    max_time=MAX_PHASE_TIME, args=(), watch=()):
    """Integrate until the first terminal event.

    ``watch`` holds non-terminal event functions whose roots are reported in
    ``trajectory.watched`` keyed by their ``kind``.
    """
    y0 = np.asarray(y0, dtype=float)
    if not events:
        raise ValueError("at least one event function is required")
    for ev in events:
        if getattr(ev, "armed", True) and ev(t0, y0, *args) == 0.0:
            traj = PhaseTrajectory(t0, t0, np.array([t0]), y0[:, None].copy())
            return traj, PhaseEvent(getattr(ev, "kind", FAILURE), t0, y0.copy(), 0.0)
    for ev in events:
        ev.terminal = True
    for w in watch:
        w.terminal = False
    allev = list(events) + list(watch)
    r = solve_ivp(fun, (t0, t0 + max_time), y0, method="DOP853", rtol=rtol, atol=atol,
                  events=allev, dense_output=True, args=args)
    if r.status == -1:
        raise IntegrationError(f"integration failed: {r.message}")
    watched = {getattr(w, "kind", str(i)): np.asarray(r.t_events[len(events) + i])
               for i, w in enumerate(watch)}
    traj = PhaseTrajectory(t0, float(r.t[-1]), r.t, r.y, r.sol, watched)
    if r.status == 0:
        raise IntegrationError("phase timeout")
    for i, ev in enumerate(events):
        if len(r.t_events[i]):
            te = float(r.t_events[i][-1])
            ye = np.asarray(r.y_events[i][-1], dtype=float)
            return traj, PhaseEvent(getattr(ev, "kind", FAILURE), te, ye,
                                    abs(float(ev(te, ye, *args))))
    raise IntegrationError("solver stopped without a terminal event")  # pragma: no cover


# ---------------------------------------------------------------- dynamics

def _flight_rhs(t, s, g):
    return [s[3], s[4], s[5], 0.0, -g, 0.0]


def _stance_rhs(t, s, fx, fz, p, vp):
    Fx, Fz, tau, length, rate, leg_rate = stance_kernel(s, fx, fz, p, vp)
    dl = length - p.l0
    hip_power = tau * (leg_rate - s[5])
    return [s[3], s[4], s[5], Fx / p.m, Fz / p.m - p.g, -((s[0] - fx) * Fz - (s[1] - fz) * Fx) / p.J,
            -p.c * rate * rate * dl, hip_power, max(hip_power, 0.0), Fx, Fz, s[2]]


def grf_at(s, foot, params, vp):
    Fx, Fz, *_ = stance_kernel(s, foot[0], foot[1], params, vp)
    return Fx, Fz


def foot_at_touchdown(state, theta_td, params):
    hx, hz = hip_position(state, params)
    return hx - params.l0 * math.cos(theta_td), hz - params.l0 * math.sin(theta_td)


@dataclass(frozen=True)
class Controls:
    theta_td: float
    vp: VpTarget = VpTarget()


@dataclass
class StepRecord:
    """One apex-to-apex step. Times are relative to the starting apex."""

    index: int
    ground: float
    controls: Controls
    apex_in: np.ndarray
    apex_out: np.ndarray
    foot: tuple
    events: list
    t: np.ndarray
    states: np.ndarray
    phase: np.ndarray
    stance_t: np.ndarray
    stance_states: np.ndarray
    stance_aux: np.ndarray
    grf: np.ndarray
    t_td: float
    t_to: float
    t_apex: float
    theta_mean: float
    theta_min: float
    theta_max: float
    peak_grf_z: float
    peak_grf_x: float
    braking_split: float | None
    braking_impulse: tuple | None
    damper_loss: float
    hip_work: float
    hip_work_pos: float
    impulse: tuple
    energy_residual: float
    t_offset: float = 0.0

    @property
    def stance_time(self):
        return self.t_to - self.t_td

    @property
    def step_time(self):
        return self.t_apex

    @property
    def excursion(self):
        return self.theta_max - self.theta_min


def _refine_peak(f, t, i, sense):
    lo, hi = t[max(i - 1, 0)], t[min(i + 1, len(t) - 1)]
    if hi <= lo:
        return f(t[i])
    r = minimize_scalar(lambda u: -sense * f(u), bounds=(lo, hi), method="bounded",
                        options={"xatol": 1e-12})
    return max(sense * f(t[i]), -r.fun) * sense


def simulate_step(apex, controls, ground, params=ModelParams(), *, index=0, t_offset=0.0,
                  n_flight=40, n_stance=201, rtol=RTOL, atol=ATOL):
    """Simulate one step from an apex state.

    Raises :class:`SimulationFailure` with a ``kind`` on any failure mode.
    """
    try:
        return _simulate_step(apex, controls, ground, params, index, t_offset,
                              n_flight, n_stance, rtol, atol)
    except GeometryError as exc:
        raise SimulationFailure(GEOMETRY, str(exc), index) from exc
    except IntegrationError as exc:
        kind = TIMEOUT if "timeout" in str(exc) else NON_FINITE
        raise SimulationFailure(kind, str(exc), index) from exc


def _simulate_step(apex, controls, ground, p, index, t_offset, n_flight, n_stance, rtol, atol):
    s0 = (apex.as_array() if isinstance(apex, ComState) else np.asarray(apex, float)).copy()
    if not np.all(np.isfinite(s0)):
        raise SimulationFailure(NON_FINITE, "non-finite apex state", index)
    th_td = controls.theta_td
    vp = controls.vp
    if not 0.0 < th_td < math.pi:
        raise SimulationFailure(LEG_RANGE, f"leg angle {th_td} outside (0, pi)", index)
    l0, c_ = p.l0, math.cos(th_td)
    sn_td = math.sin(th_td)
    rhc = p.r_hc

    def foot_height(t, s, g):
        return s[1] - rhc * math.cos(s[2]) - l0 * sn_td - ground

    if foot_height(0.0, s0, p.g) <= 0.0:
        raise SimulationFailure(NO_CLEARANCE, "foot starts at or below the ground", index)
    tr1, td = integrate_phase(_flight_rhs, s0, [event(foot_height, TOUCH_DOWN, -1)],
                              args=(p.g,), rtol=rtol, atol=atol)
    s_td = td.state
    fx, fz = foot_at_touchdown(s_td, th_td, p)
    fz_ground = ground

    def leg_ext(t, s, fx_, fz_, p_, vp_):
        hx = s[0] + rhc * math.sin(s[2]) - fx_
        hz = s[1] - rhc * math.cos(s[2]) - fz_
        return math.sqrt(hx * hx + hz * hz) - l0

    def com_low(t, s, *a):
        return s[1] - fz_ground

    def trunk_rate(t, s, *a):
        return s[5]

    def grf_x(t, s, fx_, fz_, p_, vp_):
        return stance_kernel(s, fx_, fz_, p_, vp_)[0]

    y0 = np.concatenate([s_td, np.zeros(len(AUX))])
    tr2, to = integrate_phase(
        _stance_rhs, y0,
        [event(leg_ext, TAKE_OFF, 1, armed=False), event(com_low, FELL, -1)],
        args=(fx, fz, p, vp), rtol=rtol, atol=atol,
        watch=[event(trunk_rate, "trunk_rate", 0, terminal=False),
               event(grf_x, "grf_x", 1, terminal=False)])
    if to.kind == FELL:
        raise SimulationFailure(FELL, "CoM fell to the ground during stance", index)
    s_to = to.state[:6]
    aux = to.state[6:]
    if s_to[4] <= 0.0:
        raise SimulationFailure(NO_APEX, "take-off with downward velocity, no apex", index)

    def apex_ev(t, s, g):
        return s[4]

    tr3, ap = integrate_phase(_flight_rhs, s_to, [event(apex_ev, APEX, -1)],
                              args=(p.g,), rtol=rtol, atol=atol)
    s_ap = ap.state
    t1, t2, t3 = td.time, to.time, ap.time

    # dense samples
    ta = np.linspace(0.0, t1, n_flight)
    tb = np.linspace(0.0, t2, n_stance)
    tc = np.linspace(0.0, t3, n_flight)
    ya = tr1(ta) if t1 > 0 else np.repeat(s0[:, None], n_flight, axis=1)
    yb = tr2(tb)
    yc = tr3(tc)
    ya[:, -1] = s_td
    yb[:6, 0] = s_td
    yb[:, -1] = to.state
    yc[:, 0] = s_to
    yc[:, -1] = s_ap
    grf = np.array([grf_at(y, (fx, fz), p, vp) for y in yb[:6].T])
    if not np.all(np.isfinite(grf)):
        raise SimulationFailure(NON_FINITE, "non-finite GRF", index)
    bw = p.m * p.g
    if grf[:, 1].min() < -1e-9 * bw:
        raise SimulationFailure(TENSION, "vertical GRF would require tension", index)

    t = np.concatenate([ta, t1 + tb, t1 + t2 + tc])
    states = np.concatenate([ya, yb[:6], yc], axis=1).T
    phase = np.array(["flight"] * n_flight + ["stance"] * n_stance + ["flight"] * n_flight)

    # trunk angle statistics: flight is linear in time, stance extremes sit at rate roots
    thetas = [s0[2], s_td[2], s_to[2], s_ap[2]]
    for tt in tr2.watched.get("trunk_rate", []):
        thetas.append(float(tr2(tt)[2]))
    th_int = (s0[2] * t1 + 0.5 * s0[5] * t1 * t1 + aux[5]
              + s_to[2] * t3 + 0.5 * s_to[5] * t3 * t3)
    T = t1 + t2 + t3

    iz = int(np.argmax(grf[:, 1]))
    ix = int(np.argmax(np.abs(grf[:, 0])))
    sense = 1.0 if grf[ix, 0] >= 0 else -1.0
    pz = _refine_peak(lambda u: grf_at(tr2(u), (fx, fz), p, vp)[1], tb, iz, 1.0)
    px = abs(_refine_peak(lambda u: grf_at(tr2(u), (fx, fz), p, vp)[0], tb, ix, sense))

    crossings = [u for u in tr2.watched.get("grf_x", []) if 0.0 < u < t2]
    if crossings:
        split = float(crossings[0])
        yb_split = tr2(split)
        braking = (float(yb_split[9]), float(yb_split[10]))
    else:
        split, braking = None, None

    e_in = mechanical_energy(s_td, p)
    e_out = mechanical_energy(s_to, p)
    resid = (e_out - e_in) - (aux[1] - aux[0])

    events = [PhaseEvent(TOUCH_DOWN, t1, s_td, td.residual),
              PhaseEvent(TAKE_OFF, t1 + t2, s_to.copy(), to.residual),
              PhaseEvent(APEX, T, s_ap, ap.residual)]
    return StepRecord(
        index=index, ground=ground, controls=controls, apex_in=s0, apex_out=s_ap,
        foot=(fx, fz), events=events, t=t, states=states, phase=phase,
        stance_t=t1 + tb, stance_states=yb[:6].T, stance_aux=yb[6:].T, grf=grf,
        t_td=t1, t_to=t1 + t2, t_apex=T,
        theta_mean=th_int / T, theta_min=min(thetas), theta_max=max(thetas),
        peak_grf_z=pz, peak_grf_x=px, braking_split=None if split is None else t1 + split,
        braking_impulse=braking, damper_loss=float(aux[0]), hip_work=float(aux[1]),
        hip_work_pos=float(aux[2]), impulse=(float(aux[3]), float(aux[4])),
        energy_residual=float(resid), t_offset=t_offset)


# ---------------------------------------------------------------- gait runs

@dataclass
class GaitTrace:
    steps: list
    failure: SimulationFailure | None = None

    @property
    def failed(self):
        return self.failure is not None

    @property
    def failure_step(self):
        return None if self.failure is None else self.failure.step


def run_gait(apex, controller, terrain=TerrainProfile(), params=ModelParams(), n_steps=100,
             *, x_reset=True):
    """Run up to ``n_steps`` steps, asking ``controller`` for controls at each apex.

    ``controller`` needs ``controls(apex_state, last_step)`` returning
    :class:`Controls`. Failures stop the run and are stored on the trace.
    With ``x_reset`` each step starts at x = 0 relative to the previous
    foot-independent frame so long runs do not lose precision in x.
    """
    s = (apex.as_array() if isinstance(apex, ComState) else np.asarray(apex, float)).copy()
    steps = []
    last = None
    t_off = 0.0
    for i in range(n_steps):
        try:
            if not np.all(np.isfinite(s)):
                raise SimulationFailure(NON_FINITE, "non-finite apex state", i)
            ctrl = controller.controls(s, last)
            rec = simulate_step(s, ctrl, terrain.height(i), params, index=i, t_offset=t_off)
        except SimulationFailure as exc:
            if exc.step is None:
                exc.step = i
            return GaitTrace(steps, exc)
        steps.append(rec)
        last = rec
        t_off += rec.t_apex
        s = rec.apex_out.copy()
        if x_reset:
            s[0] = 0.0
    return GaitTrace(steps)


class FixedControls:
    """Open-loop controller that always returns the same controls."""

    def __init__(self, controls):
        self._c = controls

    def controls(self, apex, last):
        return self._c


# ---------------------------------------------------------------- export

TRACE_COLUMNS = ("step", "phase", "t", "x", "z", "theta", "xd", "zd", "thetad", "grf_x", "grf_z")


def _fmt(v):
    return repr(float(v))


def trace_rows(trace):
    for rec in trace.steps:
        j = 0
        for k in range(len(rec.t)):
            if rec.phase[k] == "stance":
                gx, gz = rec.grf[j]
                j += 1
            else:
                gx = gz = 0.0
            yield (rec.index, rec.phase[k], rec.t_offset + rec.t[k], *rec.states[k], gx, gz)


def write_trace_csv(trace, fh, header_comment=None):
    """CSV with one row per sample. ``fh`` is a text file or a path."""
    if isinstance(fh, (str, bytes)) or hasattr(fh, "__fspath__"):
        with open(fh, "w", newline="") as f:
            return write_trace_csv(trace, f, header_comment)
    if header_comment:
        fh.write(f"# {header_comment}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for row in trace_rows(trace):
        w.writerow([row[0], row[1]] + [_fmt(v) for v in row[2:]])


def trace_csv_text(trace, header_comment=None):
    buf = io.StringIO()
    write_trace_csv(trace, buf, header_comment)
    return buf.getvalue()


def step_summary(rec):
    return {
        "index": rec.index,
        "ground": rec.ground,
        "theta_td": rec.controls.theta_td,
        "vp_angle": rec.controls.vp.angle,
        "apex_in": [float(v) for v in rec.apex_in],
        "apex_out": [float(v) for v in rec.apex_out],
        "stance_time": rec.stance_time,
        "step_time": rec.step_time,
        "events": [{"kind": e.kind, "time": e.time, "residual": e.residual} for e in rec.events],
        "energy_residual": rec.energy_residual,
    }
