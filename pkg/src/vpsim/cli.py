"""Command line: ``vpsim simulate|perturb|analyze``.

Exit codes: 0 ok, 2 input error, 3 numerical failure. On error a JSON object
with ``error`` and ``message`` goes to stderr (and ``error.json`` in the
output directory when one is known).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .analysis import analyze_trial, condition_summary, load_trials
from .config import RunConfig
from .control import gains_for_drop
from .errors import ConfigError, ConvergenceError, EstimationError, SimulationFailure
from .experiments import RECOVERY_KEYS, base_controller, find_base_gait, stepdown_experiment
from .sim import TerrainProfile, run_gait, step_summary, write_trace_csv

OK, INPUT_ERROR, NUMERIC_ERROR = 0, 2, 3


class CliError(Exception):
    def __init__(self, code, kind, message, **extra):
        super().__init__(message)
        self.code, self.kind, self.extra = code, kind, extra


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _load_config(path):
    try:
        return RunConfig.load(path)
    except ConfigError as exc:
        raise CliError(INPUT_ERROR, "config", str(exc), field=exc.field) from exc


def _base(cfg):
    try:
        return find_base_gait(cfg.params, cfg.targets)
    except (ConvergenceError, SimulationFailure) as exc:
        raise CliError(NUMERIC_ERROR, "convergence", str(exc)) from exc


def _metrics_dict(m):
    return {k: (float(v) if not isinstance(v, bool) else v) for k, v in m.as_dict().items()}


def cmd_simulate(args):
    cfg = _load_config(args.config)
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = _base(cfg)
    gains = gains_for_drop(0.0, cfg.gains) if cfg.scheduled else cfg.gains
    trace = run_gait(base.apex, base_controller(base, gains), TerrainProfile(), cfg.params,
                     cfg.steps)
    write_trace_csv(trace, out / "base_trace.csv", f"config_hash={cfg.hash}")
    summary = {
        "config_hash": cfg.hash,
        "config": cfg.to_dict(),
        "base_gait": {
            "apex": [float(v) for v in base.apex],
            "theta_td": base.theta_td,
            "vp_angle": base.vp.angle,
            "residual": base.residual,
            "iterations": base.iterations,
        },
        "duty_factor": base.metrics.duty_factor,
        "metrics": _metrics_dict(base.metrics),
        "steps_completed": len(trace.steps),
        "failure": None if trace.failure is None else
        {"kind": trace.failure.kind, "step": trace.failure.step, "message": str(trace.failure)},
        "first_step": step_summary(trace.steps[0]) if trace.steps else None,
    }
    _dump(out / "summary.json", summary)
    return OK


def _parse_dz(text):
    try:
        dzs = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise CliError(INPUT_ERROR, "argument", f"bad --dz list: {text!r}", field="dz") from exc
    if not dzs:
        raise CliError(INPUT_ERROR, "argument", "empty --dz list", field="dz")
    for dz in dzs:
        if not -0.4 <= dz <= 0.0:
            raise CliError(INPUT_ERROR, "argument", f"dz {dz} outside [-0.4, 0]", field="dz")
    return dzs


def _perturb_one(job):
    cfg, base, dz, steps = job
    gains = gains_for_drop(dz, cfg.gains) if cfg.scheduled else cfg.gains
    return stepdown_experiment(base, dz, steps, gains=gains, scheduled=False)


def _dz_tag(dz):
    return f"{dz:+.3f}".replace("+", "p").replace("-", "m")


def cmd_perturb(args):
    cfg = _load_config(args.config)
    dzs = _parse_dz(args.dz)
    steps = args.steps if args.steps is not None else cfg.steps
    if steps < 1:
        raise CliError(INPUT_ERROR, "argument", "--steps must be >= 1", field="steps")
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = _base(cfg)
    jobs = [(cfg, base, dz, steps) for dz in dzs]
    if args.sweep and len(jobs) > 1:
        with ProcessPoolExecutor() as ex:
            runs = list(ex.map(_perturb_one, jobs))
    else:
        runs = [_perturb_one(j) for j in jobs]
    report = {"config_hash": cfg.hash, "recovery_keys": list(RECOVERY_KEYS),
              "base": _metrics_dict(base.metrics), "runs": []}
    for run in runs:
        name = f"perturb_dz{_dz_tag(run.dz)}.csv"
        with open(out / name, "w", newline="") as f:
            f.write(f"# config_hash={cfg.hash}\n")
            keys = list(base.metrics.as_dict())
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["step", "deviation"] + keys)
            for i, (m, d) in enumerate(zip(run.metrics, run.deviations)):
                w.writerow([i, repr(float(d))] + [repr(float(v)) if not isinstance(v, bool) else v
                                                  for v in m.as_dict().values()])
        m0 = run.metrics[0] if run.metrics else None
        m1 = run.metrics[1] if len(run.metrics) > 1 else None
        report["runs"].append({
            "dz": run.dz, "file": name, "steps_completed": len(run.steps),
            "failure": None if run.failure is None else
            {"kind": run.failure.kind, "step": run.failure.step},
            "recovery_step": run.recovery_step,
            "recovered_within_20": run.recovery_step is not None and run.recovery_step <= 20,
            "step0_peak_vgrf": None if m0 is None else m0.peak_vgrf,
            "step0_norm_impulse_z": None if m0 is None else m0.norm_impulse_z,
            "step1_hip_work": None if m1 is None else m1.hip_work,
            "energy_audit": run.energy_audit,
            "potential_drop": cfg.params.m * cfg.params.g * run.dz,
            "final_deviation": run.deviations[-1] if run.deviations else None,
            "gains": {"k_xd": run.gains.k_xd, "k_xd0": run.gains.k_xd0, "k_vp": run.gains.k_vp},
        })
    _dump(out / "recovery_report.json", report)
    return OK


def _input_hash(data, variant):
    """Provenance hash over the variant and every input file, in sorted order."""
    h = hashlib.sha256(f"variant={variant}".encode())
    for f in sorted(data.rglob("*")):
        if f.suffix in (".csv", ".json") and f.is_file():
            h.update(str(f.relative_to(data)).encode())
            h.update(f.read_bytes())
    return h.hexdigest()


def cmd_analyze(args):
    data = Path(args.data)
    if not data.is_dir():
        raise CliError(INPUT_ERROR, "input", f"data directory not found: {data}")
    loaded = load_trials(data)
    if not loaded.trials:
        raise CliError(INPUT_ERROR, "input", "no trials found", file_errors=loaded.errors)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    errors = dict(loaded.errors)
    for rec in loaded.trials:
        try:
            results.append(analyze_trial(rec, args.variant))
        except EstimationError as exc:
            errors[rec.name] = str(exc)
    rows = [r.row() for r in results]
    digest = _input_hash(data, args.variant)
    with open(out / "trials.csv", "w", newline="") as f:
        f.write(f"# config_hash={digest} variant={args.variant}\n")
        w = csv.DictWriter(f, fieldnames=list(rows[0]) if rows else ["name"], lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else (repr(v) if isinstance(v, float) else v))
                        for k, v in r.items()})
    _dump(out / "summary.json", {"config_hash": digest, "variant": args.variant, "trials": len(results),
                                 "file_errors": errors, "conditions": condition_summary(results)})
    return OK


def build_parser():
    p = argparse.ArgumentParser(prog="vpsim", description="VP-controlled running simulator")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="find the base gait and run it")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)
    q = sub.add_parser("perturb", help="step-down experiments")
    q.add_argument("--config", required=True)
    q.add_argument("--dz", required=True, help="comma separated drops in metres, e.g. -0.1,-0.4")
    q.add_argument("--steps", type=int)
    q.add_argument("--out")
    q.add_argument("--sweep", action="store_true", help="run the drops in parallel")
    q.set_defaults(func=cmd_perturb)
    a = sub.add_parser("analyze", help="estimate the VP from recorded trials")
    a.add_argument("--data", required=True)
    a.add_argument("--variant", choices=("90", "100"), default="90")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze)
    return p


def main(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # negative drops look like options to argparse; glue them to the flag
    for i in range(len(argv) - 1):
        if argv[i] == "--dz":
            argv[i:i + 2] = [f"--dz={argv[i + 1]}", ""]
    argv = [a for a in argv if a != ""]
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return INPUT_ERROR if exc.code else OK
    try:
        return args.func(args)
    except CliError as exc:
        err = {"error": exc.kind, "message": str(exc), **exc.extra}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        out = getattr(args, "out", None)
        if out:
            Path(out).mkdir(parents=True, exist_ok=True)
            _dump(Path(out) / "error.json", err)
        return exc.code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
