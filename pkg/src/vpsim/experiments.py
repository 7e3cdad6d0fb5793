"""Base-gait search, step-down experiments and per-step metrics."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .control import ApexController, ControllerGains, ControlState, gains_for_drop
from .errors import ConvergenceError, SimulationFailure
from .model import ModelParams, VpTarget, spring_energy
from .sim import Controls, TerrainProfile, run_gait, simulate_step


@dataclass(frozen=True)
class GaitTargets:
    speed: float = 5.0
    vp_radius: float = 0.30
    vp_angle: float = -math.pi
    vp_frame: str = "vertical"
    # the fixed points at a given speed form a one-parameter family in apex
    # height; the trunk excursion picks one member
    trunk_excursion_deg: float = 4.45

    def __post_init__(self):
        if not 2.0 <= self.speed <= 8.0:
            raise ValueError("target speed must lie in [2, 8] m/s")

    @property
    def vp(self):
        return VpTarget(self.vp_radius, self.vp_angle, self.vp_frame)


# seed: apex height, trunk angle, trunk rate, touch-down leg angle
DEFAULT_SEED = (1.0428, -0.1793, 0.4208, 1.9882)


@dataclass(frozen=True)
class StepMetrics:
    duty_factor: float          # %
    stance_time: float
    step_time: float
    peak_vgrf: float            # BW
    peak_hgrf: float            # BW
    impulse_x: float            # N s
    impulse_z: float
    braking_x: float
    braking_z: float
    propulsion_x: float
    propulsion_z: float
    norm_impulse_x: float
    norm_impulse_z: float
    norm_braking_x: float
    norm_braking_z: float
    norm_propulsion_x: float
    norm_propulsion_z: float
    hip_work: float             # J, net over stance
    hip_work_pos: float
    hip_work_neg: float
    damper_loss: float
    max_leg_deflection: float   # m
    trunk_excursion: float      # deg
    mean_trunk_angle: float     # rad
    apex_speed: float
    apex_height: float          # above the ground of this step
    no_crossing: bool = False

    def as_dict(self):
        return asdict(self)


# metrics that must settle back to base after a perturbation; the net
# horizontal impulse is excluded because its base value is zero
RECOVERY_KEYS = ("duty_factor", "stance_time", "step_time", "peak_vgrf", "peak_hgrf",
                 "norm_impulse_z", "trunk_excursion", "apex_speed", "apex_height")


def impulse_scale(params):
    return params.m * params.g * math.sqrt(params.l0 / params.g)


def grf_metrics(step, params=ModelParams()):
    bw = params.weight
    sc = impulse_scale(params)
    px, pz = step.impulse
    flagged = step.braking_impulse is None
    if flagged:
        # whole stance goes to whichever side the net horizontal impulse sits on
        bx, bz = (px, pz) if px < 0 else (0.0, 0.0)
    else:
        bx, bz = step.braking_impulse
    lengths = np.hypot(*(np.column_stack(_hip(step.stance_states, params)) - step.foot).T)
    return StepMetrics(
        duty_factor=100.0 * step.stance_time / (2.0 * step.step_time),
        stance_time=step.stance_time,
        step_time=step.step_time,
        peak_vgrf=step.peak_grf_z / bw,
        peak_hgrf=step.peak_grf_x / bw,
        impulse_x=px, impulse_z=pz,
        braking_x=bx, braking_z=bz,
        propulsion_x=px - bx, propulsion_z=pz - bz,
        norm_impulse_x=px / sc, norm_impulse_z=pz / sc,
        norm_braking_x=bx / sc, norm_braking_z=bz / sc,
        norm_propulsion_x=(px - bx) / sc, norm_propulsion_z=(pz - bz) / sc,
        hip_work=step.hip_work,
        hip_work_pos=step.hip_work_pos,
        hip_work_neg=step.hip_work - step.hip_work_pos,
        damper_loss=step.damper_loss,
        max_leg_deflection=float(params.l0 - lengths.min()),
        trunk_excursion=math.degrees(step.excursion),
        mean_trunk_angle=step.theta_mean,
        apex_speed=float(step.apex_out[3]),
        apex_height=float(step.apex_out[1] - step.ground),
        no_crossing=flagged,
    )


def _hip(states, params):
    th = states[:, 2]
    return states[:, 0] + params.r_hc * np.sin(th), states[:, 1] - params.r_hc * np.cos(th)


def fold_change(base_value, value):
    return (value - base_value) / base_value


@dataclass
class EnergyTrace:
    t: np.ndarray
    spring: np.ndarray
    damper_loss: np.ndarray
    hip_work: np.ndarray
    hip_work_pos: np.ndarray
    hip_work_neg: np.ndarray
    kinetic: np.ndarray
    potential: np.ndarray
    balance_residual: float
    fold_changes: dict = field(default_factory=dict)

    def totals(self):
        return {"peak_spring": float(self.spring.max()),
                "damper_loss": float(self.damper_loss[-1]),
                "hip_work": float(self.hip_work[-1]),
                "hip_work_pos": float(self.hip_work_pos[-1]),
                "hip_work_neg": float(self.hip_work_neg[-1])}


def energy_accounting(step, params=ModelParams(), base=None):
    """Stance energy bookkeeping; ``base`` (a BaseGait or StepRecord) adds fold changes."""
    s, aux = step.stance_states, step.stance_aux
    hx, hz = _hip(s, params)
    lengths = np.hypot(hx - step.foot[0], hz - step.foot[1])
    spring = np.array([spring_energy(l, params) for l in lengths])
    spring[0] = spring[-1] = 0.0
    kin = 0.5 * params.m * (s[:, 3] ** 2 + s[:, 4] ** 2) + 0.5 * params.J * s[:, 5] ** 2
    pot = params.m * params.g * s[:, 1]
    tr = EnergyTrace(t=step.stance_t.copy(), spring=spring, damper_loss=aux[:, 0].copy(),
                     hip_work=aux[:, 1].copy(), hip_work_pos=aux[:, 2].copy(),
                     hip_work_neg=aux[:, 1] - aux[:, 2], kinetic=kin, potential=pot,
                     balance_residual=step.energy_residual)
    if base is not None:
        ref = energy_accounting(getattr(base, "step", base), params).totals()
        tr.fold_changes = {k: fold_change(ref[k], v) if ref[k] != 0 else 0.0
                           for k, v in tr.totals().items()}
    return tr


# ---------------------------------------------------------------- base gait

@dataclass
class BaseGait:
    apex: np.ndarray
    controls: Controls
    step: object
    metrics: StepMetrics
    residual: float
    iterations: int
    params: ModelParams
    targets: GaitTargets

    @property
    def theta_td(self):
        return self.controls.theta_td

    @property
    def vp(self):
        return self.controls.vp


def _unpack(v, targets):
    z, th, w, ttd = v
    return np.array([0.0, z, th, targets.speed, 0.0, w]), Controls(ttd, targets.vp)


def _residual(v, targets, params):
    apex, ctrl = _unpack(v, targets)
    rec = simulate_step(apex, ctrl, 0.0, params)
    out = rec.apex_out
    r = np.array([out[1] - apex[1], out[3] - targets.speed, out[2] - apex[2], out[5] - apex[5],
                  rec.excursion - math.radians(targets.trunk_excursion_deg)])
    return r, rec


def find_base_gait(params=ModelParams(), targets=GaitTargets(), seed=DEFAULT_SEED,
                   tol=1e-8, max_iter=500, fd_step=1e-7):
    """Periodic level-running gait by damped Gauss-Newton on the apex return map.

    Unknowns are apex height, trunk angle and rate at apex and the touch-down
    leg angle; residuals are the four periodicity conditions plus the trunk
    excursion target.
    """
    v = np.asarray(seed, dtype=float).copy()

    def safe(u):
        try:
            return _residual(u, targets, params)
        except SimulationFailure:
            return None, None

    r, rec = safe(v)
    if r is None:
        raise ConvergenceError("seed does not produce a step", math.inf)
    best = np.abs(r).max()
    it = 0
    while it < max_iter:
        if np.abs(r[:4]).max() < tol * 1e-2 and abs(r[4]) < 1e-10:
            break
        it += 1
        Jm = np.empty((5, 4))
        for j in range(4):
            e = np.zeros(4)
            e[j] = fd_step
            rp, _ = safe(v + e)
            rm, _ = safe(v - e)
            if rp is None or rm is None:
                raise ConvergenceError("apex map undefined near iterate", best)
            Jm[:, j] = (rp - rm) / (2 * fd_step)
        dv = np.linalg.lstsq(Jm, -r, rcond=None)[0]
        lam = 1.0
        n0 = np.linalg.norm(r)
        while lam > 1e-4:
            rn, recn = safe(v + lam * dv)
            if rn is not None and np.linalg.norm(rn) < n0:
                break
            lam *= 0.5
        else:
            break
        v = v + lam * dv
        r, rec = rn, recn
        best = min(best, np.abs(r).max())
        if np.linalg.norm(lam * dv) < 1e-14:
            break
    res = float(np.abs(r[:4]).max())
    if res >= tol:
        raise ConvergenceError(f"base gait did not converge (residual {res:.3g})", res)
    apex, ctrl = _unpack(v, targets)
    return BaseGait(apex=apex, controls=ctrl, step=rec, metrics=grf_metrics(rec, params),
                    residual=res, iterations=it, params=params, targets=targets)


def base_controller(base, gains=ControllerGains()):
    g = replace(gains, theta_des=base.step.theta_mean, xd_des=base.targets.speed,
                thetad_ref=float(base.apex[5]))
    st = ControlState(theta_td=base.theta_td, theta_vp=base.vp.angle,
                      xd_ref=base.targets.speed, xd_prev=base.targets.speed,
                      mean_theta=base.step.theta_mean)
    return ApexController(g, st, base.vp)


# ---------------------------------------------------------------- step-down

@dataclass
class PerturbationRun:
    dz: float
    base: BaseGait
    gains: ControllerGains
    steps: list
    metrics: list
    energies: list
    failure: SimulationFailure | None
    deviations: list
    recovery_step: int | None
    energy_audit: float

    @property
    def failed(self):
        return self.failure is not None


def metric_deviation(m, base_m, keys=RECOVERY_KEYS):
    return max(abs(getattr(m, k) - getattr(base_m, k)) / abs(getattr(base_m, k)) for k in keys)


def recovery_step(deviations, tol=0.01):
    """First step index from which every later step stays within ``tol``."""
    idx = None
    for i in range(len(deviations) - 1, -1, -1):
        if deviations[i] <= tol:
            idx = i
        else:
            break
    return idx


def stepdown_experiment(base, dz, n_steps=30, gains=None, scheduled=True):
    """Drop the ground by ``dz`` (<= 0) at step 0 and run ``n_steps`` steps.

    ``gains`` defaults to :class:`ControllerGains` with the speed gains taken
    from the drop-dependent schedule when ``scheduled`` is true.
    """
    if not -0.4 - 1e-12 <= dz <= 0.0:
        raise ValueError("dz must lie in [-0.4, 0]")
    params = base.params
    g = gains or ControllerGains()
    if scheduled and gains is None:
        g = gains_for_drop(dz, g)
    ctl = base_controller(base, g)
    trace = run_gait(base.apex, ctl, TerrainProfile(drop=dz), params, n_steps)
    metrics = [grf_metrics(s, params) for s in trace.steps]
    energies = [energy_accounting(s, params, base) for s in trace.steps]
    devs = [metric_deviation(m, base.metrics) for m in metrics]
    rec = None if trace.failed else recovery_step(devs)
    audit = sum(s.hip_work - s.damper_loss for s in trace.steps)
    return PerturbationRun(dz=dz, base=base, gains=ctl.gains, steps=trace.steps, metrics=metrics,
                           energies=energies, failure=trace.failure, deviations=devs,
                           recovery_step=rec, energy_audit=audit)
