"""Experimental GRF pipeline: ingest trials, express forces about the CoM,
estimate the VP by least squares and summarise per condition.

Trial files come in pairs, ``<name>.csv`` with header
``t,grf_x,grf_z,cop_x,com_x,com_z`` (SI units, optional extra columns such
as ``gamma`` pass through) and ``<name>.json`` with keys ``subject``,
``condition``, ``step``, ``body_weight_N``, ``leg_length_m`` and optionally
``stride_time_s`` and ``ground_z``.
"""
from __future__ import annotations

import json
import logging
import math
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import EstimationError

log = logging.getLogger(__name__)

COLUMNS = ("t", "grf_x", "grf_z", "cop_x", "com_x", "com_z")
CONDITIONS = ("V0", "V10", "C10", "C0")
NO_VP_CONDITIONS = ("C0",)
STANCE_THRESHOLD = 20.0  # N
N_SAMPLES = 100
COND_LIMIT = 1e12


@dataclass
class TrialRecording:
    subject: str
    condition: str
    step: int
    body_weight: float
    leg_length: float
    t: np.ndarray
    grf: np.ndarray        # (n, 2)
    cop_x: np.ndarray
    com: np.ndarray        # (n, 2)
    ground_z: float = 0.0
    stance_time: float = float("nan")
    stride_time: float | None = None
    name: str = ""
    extra: dict = field(default_factory=dict)
    start_index: int = 0

    def __post_init__(self):
        if not self.body_weight > 0:
            raise ValueError("body weight must be positive")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("time must be strictly increasing")

    @property
    def n(self):
        return len(self.t)

    @property
    def duty_factor(self):
        if not self.stride_time:
            return None
        return 100.0 * self.stance_time / self.stride_time


@dataclass(frozen=True)
class ForceLine:
    origin: np.ndarray
    direction: np.ndarray


@dataclass
class VpEstimate:
    x: float
    z: float
    residuals: np.ndarray
    variant: str = "90"

    @property
    def point(self):
        return np.array([self.x, self.z])


@dataclass
class LoadReport:
    trials: list
    errors: dict


# ---------------------------------------------------------------- ingest

def _read_csv(path):
    with open(path) as f:
        header = f.readline().strip().split(",")
    missing = [c for c in COLUMNS if c not in header]
    if missing:
        raise ValueError(f"missing column(s): {', '.join(missing)}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {name: data[:, i] for i, name in enumerate(header)}


def stance_window(grf_z, threshold=STANCE_THRESHOLD):
    """Index range of the longest contiguous run with grf_z above threshold."""
    above = np.asarray(grf_z) > threshold
    best, cur, start = (0, 0), 0, 0
    for i, a in enumerate(above):
        if a:
            if cur == 0:
                start = i
            cur += 1
            if cur > best[1] - best[0]:
                best = (start, i + 1)
        else:
            cur = 0
    if best[1] - best[0] < 2:
        raise ValueError("empty stance")
    return best


def resample_stance(cols, threshold=STANCE_THRESHOLD, n=N_SAMPLES):
    i0, i1 = stance_window(cols["grf_z"], threshold)
    t = cols["t"][i0:i1]
    tn = np.linspace(t[0], t[-1], n)
    out = {k: np.interp(tn, t, v[i0:i1]) for k, v in cols.items() if k != "t"}
    out["t"] = tn
    return out


def trial_from_columns(cols, meta, threshold=STANCE_THRESHOLD, name=""):
    t = np.asarray(cols["t"], float)
    if np.any(np.diff(t) <= 0):
        raise ValueError("time is not strictly increasing")
    r = resample_stance(cols, threshold)
    extra = {k: v for k, v in r.items() if k not in COLUMNS}
    cond = str(meta["condition"])
    if cond not in CONDITIONS:
        raise ValueError(f"unknown condition {cond!r}")
    return TrialRecording(
        subject=str(meta["subject"]), condition=cond, step=int(meta["step"]),
        body_weight=float(meta["body_weight_N"]), leg_length=float(meta["leg_length_m"]),
        t=r["t"], grf=np.column_stack([r["grf_x"], r["grf_z"]]), cop_x=r["cop_x"],
        com=np.column_stack([r["com_x"], r["com_z"]]), ground_z=float(meta.get("ground_z", 0.0)),
        stance_time=float(r["t"][-1] - r["t"][0]), stride_time=meta.get("stride_time_s"),
        name=name, extra=extra)


def load_trials(path, threshold=STANCE_THRESHOLD):
    """Load every ``*.csv`` with a sibling ``*.json`` below ``path``.

    Bad files are reported in ``errors`` keyed by file name; the rest load.
    """
    trials, errors = [], {}
    for csv_path in sorted(Path(path).rglob("*.csv")):
        meta_path = csv_path.with_suffix(".json")
        try:
            if not meta_path.exists():
                raise ValueError("missing metadata json")
            meta = json.loads(meta_path.read_text())
            trials.append(trial_from_columns(_read_csv(csv_path), meta, threshold,
                                             name=str(csv_path.relative_to(path))))
        except (ValueError, KeyError, OSError) as exc:
            errors[str(csv_path.relative_to(path))] = str(exc)
    return LoadReport(trials, errors)


def write_trial(path_stem, cols, meta):
    """Write a trial in the ingest format. ``cols`` maps column name -> array."""
    stem = Path(path_stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    names = list(COLUMNS) + [k for k in cols if k not in COLUMNS]
    data = np.column_stack([np.asarray(cols[k], float) for k in names])
    with open(stem.with_suffix(".csv"), "w") as f:
        f.write(",".join(names) + "\n")
        for row in data:
            f.write(",".join(repr(float(v)) for v in row) + "\n")
    stem.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- transforms

def trim_dataset(rec, variant="90"):
    """``"90"`` drops the first tenth of stance, ``"100"`` keeps all samples."""
    variant = str(variant)
    if variant == "100":
        return rec
    if variant != "90":
        raise ValueError("variant must be '90' or '100'")
    if rec.start_index > 0:
        return rec
    cut = rec.n // 10
    return replace(rec, t=rec.t[cut:], grf=rec.grf[cut:], cop_x=rec.cop_x[cut:],
                   com=rec.com[cut:], extra={k: v[cut:] for k, v in rec.extra.items()},
                   start_index=cut)


def com_frame_lines(rec):
    lines = []
    for i in range(rec.n):
        f = rec.grf[i]
        mag = math.hypot(f[0], f[1])
        if mag == 0.0:
            log.warning("zero GRF sample %d in %s skipped", i, rec.name)
            continue
        origin = np.array([rec.cop_x[i] - rec.com[i, 0], rec.ground_z - rec.com[i, 1]])
        lines.append(ForceLine(origin, f / mag))
    return lines


def line_distances(point, lines):
    p = np.asarray(point, float)
    return np.array([abs((p - ln.origin)[0] * ln.direction[1] - (p - ln.origin)[1] * ln.direction[0])
                     for ln in lines])


def estimate_vp(lines, variant="90"):
    """Point minimising the summed squared perpendicular distance to all lines."""
    if len(lines) < 2:
        raise EstimationError("need at least two force lines")
    A = np.zeros((2, 2))
    b = np.zeros(2)
    for ln in lines:
        d = ln.direction
        P = np.eye(2) - np.outer(d, d)
        A += P
        b += P @ ln.origin
    if np.linalg.cond(A) > COND_LIMIT:
        raise EstimationError("VP undefined for parallel forces")
    v = np.linalg.solve(A, b)
    return VpEstimate(float(v[0]), float(v[1]), line_distances(v, lines), str(variant))


def grf_angles(rec):
    return np.arctan2(rec.grf[:, 1], rec.grf[:, 0])


def predicted_angles(rec, vp):
    """Angle of the CoP->VP direction per sample, in the CoM frame."""
    ox = rec.cop_x - rec.com[:, 0]
    oz = rec.ground_z - rec.com[:, 1]
    return np.arctan2(vp[1] - oz, vp[0] - ox)


def r_squared(trials, vps):
    """Coefficient of determination of GRF angles, in percent, pooled over trials."""
    exp = [grf_angles(r) for r in trials]
    theo = [predicted_angles(r, np.asarray(getattr(v, "point", v))) for r, v in zip(trials, vps)]
    allexp = np.concatenate(exp)
    mean = allexp.mean()
    ss_tot = float(np.sum((allexp - mean) ** 2))
    if ss_tot == 0.0:
        raise EstimationError("R² undefined")
    ss_res = float(sum(np.sum((e - t) ** 2) for e, t in zip(exp, theo)))
    return 100.0 * (1.0 - ss_res / ss_tot)


@dataclass
class TrialImpulses:
    braking_x: float
    braking_z: float
    propulsion_x: float
    propulsion_z: float
    norm_braking_x: float
    norm_braking_z: float
    norm_propulsion_x: float
    norm_propulsion_z: float
    split_time: float | None
    no_crossing: bool

    @property
    def net_x(self):
        return self.braking_x + self.propulsion_x

    @property
    def norm_net_x(self):
        return self.norm_braking_x + self.norm_propulsion_x

    @property
    def norm_vertical(self):
        return self.norm_braking_z + self.norm_propulsion_z


def _trapz_split(t, y, ts):
    """Integrals of piecewise-linear y over [t0, ts] and [ts, tn]."""
    ys = np.interp(ts, t, y)
    k = np.searchsorted(t, ts)
    ta = np.append(t[:k], ts)
    ya = np.append(y[:k], ys)
    tb = np.insert(t[k:], 0, ts)
    yb = np.insert(y[k:], 0, ys)
    return float(np.trapezoid(ya, ta)), float(np.trapezoid(yb, tb))


def impulse_norm(body_weight, leg_length, g=9.81):
    return body_weight * math.sqrt(leg_length / g)


def trial_impulses(rec, g=9.81):
    t, fx, fz = rec.t, rec.grf[:, 0], rec.grf[:, 1]
    ts = None
    for i in range(len(t) - 1):
        if fx[i] < 0 <= fx[i + 1] and fx[i + 1] != fx[i]:
            ts = t[i] + (t[i + 1] - t[i]) * (-fx[i]) / (fx[i + 1] - fx[i])
            break
    if ts is None:
        total_x = float(np.trapezoid(fx, t))
        total_z = float(np.trapezoid(fz, t))
        braking = total_x < 0
        bx, bz = (total_x, total_z) if braking else (0.0, 0.0)
        px, pz = (0.0, 0.0) if braking else (total_x, total_z)
    else:
        bx, px = _trapz_split(t, fx, ts)
        bz, pz = _trapz_split(t, fz, ts)
    s = impulse_norm(rec.body_weight, rec.leg_length, g)
    return TrialImpulses(bx, bz, px, pz, bx / s, bz / s, px / s, pz / s, ts, ts is None)


# ---------------------------------------------------------------- summaries

@dataclass
class TrialResult:
    name: str
    subject: str
    condition: str
    step: int
    vp: VpEstimate | None
    r2: float | None
    impulses: TrialImpulses
    stance_time: float
    duty_factor: float | None

    def row(self):
        return {"name": self.name, "subject": self.subject, "condition": self.condition,
                "step": self.step,
                "vp_x": None if self.vp is None else self.vp.x,
                "vp_z": None if self.vp is None else self.vp.z,
                "r2": self.r2,
                "p_brake_x": self.impulses.norm_braking_x,
                "p_brake_z": self.impulses.norm_braking_z,
                "p_prop_x": self.impulses.norm_propulsion_x,
                "p_prop_z": self.impulses.norm_propulsion_z,
                "stance_time": self.stance_time, "duty_factor": self.duty_factor}


def analyze_trial(rec, variant="90"):
    impulses = trial_impulses(rec)
    vp = r2 = None
    if rec.condition not in NO_VP_CONDITIONS:
        tr = trim_dataset(rec, variant)
        vp = estimate_vp(com_frame_lines(tr), variant)
        try:
            r2 = r_squared([tr], [vp])
        except EstimationError:
            r2 = None
    return TrialResult(rec.name, rec.subject, rec.condition, rec.step, vp, r2, impulses,
                       rec.stance_time, rec.duty_factor)


SUMMARY_FIELDS = ("vp_x", "vp_z", "r2", "p_brake_x", "p_brake_z", "p_prop_x", "p_prop_z",
                  "stance_time", "duty_factor")


def _mean_sd(values):
    n = len(values)
    mean = statistics.fmean(values)
    sd = statistics.stdev(values) if n > 1 else 0.0
    return {"mean": mean, "sd": sd, "se": sd / math.sqrt(n), "n": n}


def condition_summary(results):
    """Per (condition, step): subject medians first, then mean, s.d. and SE across subjects.

    Accepts :class:`TrialResult` objects or row dicts.
    """
    rows = [r.row() if hasattr(r, "row") else r for r in results]
    groups = {}
    for r in rows:
        groups.setdefault((r["condition"], r["step"]), {}).setdefault(r["subject"], []).append(r)
    out = {}
    for (cond, step) in sorted(groups, key=lambda k: (CONDITIONS.index(k[0])
                                                      if k[0] in CONDITIONS else 99, k[1])):
        subjects = groups[(cond, step)]
        entry = {}
        for f in SUMMARY_FIELDS:
            medians = []
            for subj in sorted(subjects):
                vals = [r[f] for r in subjects[subj] if r[f] is not None]
                if vals:
                    medians.append(statistics.median(vals))
            if medians:
                entry[f] = _mean_sd(medians)
        if not entry:
            log.warning("condition %s step %s has no usable subjects", cond, step)
            continue
        entry["subjects"] = len(subjects)
        out[f"{cond}/step{step}"] = entry
    return out


# ---------------------------------------------------------------- simulator export

def export_step_as_trial(step, params, subject="sim", condition="V0", step_index=0,
                         rate=1000.0, pad=0.01):
    """Sample a simulated stance like a force plate would see it.

    Returns ``(columns, metadata)`` ready for :func:`write_trial`. A short
    zero-force margin is added on both sides of stance.
    """
    from .sim import grf_at
    t0, t1 = step.t_td, step.t_to
    n = int(math.floor((t1 - t0) * rate))
    ts = t0 + np.arange(n + 1) / rate
    # dense resample of the stored stance by linear interpolation
    st = step.stance_t
    states = np.column_stack([np.interp(ts, st, step.stance_states[:, j]) for j in range(6)])
    grf = np.array([grf_at(s, step.foot, params, step.controls.vp) for s in states])
    npad = int(round(pad * rate))
    tp_before = t0 - np.arange(npad, 0, -1) / rate
    tp_after = ts[-1] + np.arange(1, npad + 1) / rate
    t = np.concatenate([tp_before, ts, tp_after])
    z = np.zeros(npad)
    cols = {
        "t": t - t[0],
        "grf_x": np.concatenate([z, grf[:, 0], z]),
        "grf_z": np.concatenate([z, grf[:, 1], z]),
        "cop_x": np.full(len(t), step.foot[0]),
        "com_x": np.concatenate([np.interp(tp_before, step.t, step.states[:, 0]), states[:, 0],
                                 np.interp(tp_after, step.t, step.states[:, 0])]),
        "com_z": np.concatenate([np.interp(tp_before, step.t, step.states[:, 1]), states[:, 1],
                                 np.interp(tp_after, step.t, step.states[:, 1])]),
    }
    meta = {"subject": subject, "condition": condition, "step": step_index,
            "body_weight_N": params.m * params.g, "leg_length_m": params.l0,
            "stride_time_s": 2.0 * step.step_time, "ground_z": step.ground}
    return cols, meta
