"""Run configuration: a JSON document with fixed sections and no unknown keys."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .control import ControllerGains
from .errors import ConfigError
from .experiments import GaitTargets
from .model import ModelParams

GAIN_KEYS = ("k_xd", "k_xd0", "k_vp", "rate_lookahead", "scheduled")
TERRAIN_KEYS = ("dz", "step")
TOP_KEYS = ("params", "gains", "targets", "terrain", "steps", "out_dir", "seed")


@dataclass
class RunConfig:
    params: ModelParams = field(default_factory=ModelParams)
    gains: ControllerGains = field(default_factory=ControllerGains)
    scheduled: bool = True
    targets: GaitTargets = field(default_factory=GaitTargets)
    dz: float = 0.0
    drop_step: int = 0
    steps: int = 100
    out_dir: str = "out"
    seed: int = 0   # reserved; the simulation core is deterministic

    def to_dict(self):
        g = self.gains
        return {
            "params": {f.name: getattr(self.params, f.name) for f in fields(ModelParams)},
            "gains": {"k_xd": g.k_xd, "k_xd0": g.k_xd0, "k_vp": g.k_vp,
                      "rate_lookahead": g.rate_lookahead, "scheduled": self.scheduled},
            "targets": {f.name: getattr(self.targets, f.name) for f in fields(GaitTargets)},
            "terrain": {"dz": self.dz, "step": self.drop_step},
            "steps": self.steps,
            "out_dir": self.out_dir,
            "seed": self.seed,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @property
    def hash(self):
        """SHA-256 of the canonical JSON, ignoring the output directory."""
        d = self.to_dict()
        d.pop("out_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        _reject_unknown(d, TOP_KEYS, "")
        kw = {}
        if "params" in d:
            p = _section(d, "params", [f.name for f in fields(ModelParams)])
            p = {k: _num(v, f"params.{k}") for k, v in p.items()}
            for k, v in p.items():
                if k == "c":
                    if v < 0:
                        raise ConfigError("params.c must be >= 0", "params.c")
                elif v <= 0:
                    raise ConfigError(f"params.{k} must be > 0", f"params.{k}")
            kw["params"] = ModelParams(**p)
        if "gains" in d:
            g = _section(d, "gains", GAIN_KEYS)
            if "scheduled" in g:
                if not isinstance(g["scheduled"], bool):
                    raise ConfigError("gains.scheduled must be true or false", "gains.scheduled")
                kw["scheduled"] = g.pop("scheduled")
            kw["gains"] = ControllerGains(**{k: _num(v, f"gains.{k}") for k, v in g.items()})
        if "targets" in d:
            t = _section(d, "targets", [f.name for f in fields(GaitTargets)])
            for k, v in t.items():
                if k != "vp_frame":
                    t[k] = _num(v, f"targets.{k}")
            try:
                kw["targets"] = GaitTargets(**t)
            except ValueError as exc:
                raise ConfigError(str(exc), "targets") from exc
        if "terrain" in d:
            te = _section(d, "terrain", TERRAIN_KEYS)
            if "dz" in te:
                kw["dz"] = _num(te["dz"], "terrain.dz")
                if not -0.4 <= kw["dz"] <= 0.0:
                    raise ConfigError("terrain.dz must lie in [-0.4, 0]", "terrain.dz")
            if "step" in te:
                kw["drop_step"] = _int(te["step"], "terrain.step", 0)
        if "steps" in d:
            kw["steps"] = _int(d["steps"], "steps", 1)
        if "out_dir" in d:
            if not isinstance(d["out_dir"], str):
                raise ConfigError("out_dir must be a string", "out_dir")
            kw["out_dir"] = d["out_dir"]
        if "seed" in d:
            kw["seed"] = _int(d["seed"], "seed", None)
        return cls(**kw)

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", "config") from exc
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}", "config") from exc
        return cls.from_dict(d)


def _reject_unknown(d, allowed, prefix):
    for k in d:
        if k not in allowed:
            raise ConfigError(f"unknown key {prefix}{k}", f"{prefix}{k}")


def _section(d, name, allowed):
    sec = d[name]
    if not isinstance(sec, dict):
        raise ConfigError(f"{name} must be an object", name)
    _reject_unknown(sec, allowed, f"{name}.")
    return dict(sec)


def _num(v, name):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{name} must be a finite number", name)
    return float(v)


def _int(v, name, lo):
    if isinstance(v, bool) or not isinstance(v, int) or (lo is not None and v < lo):
        raise ConfigError(f"{name} must be an integer" + (f" >= {lo}" if lo is not None else ""), name)
    return v
