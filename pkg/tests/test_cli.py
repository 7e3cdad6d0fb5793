import json

import pytest

from vpsim.analysis import export_step_as_trial, write_trial
from vpsim.cli import main
from vpsim.config import RunConfig
from vpsim.errors import ConfigError
from vpsim.model import ModelParams


def write_cfg(tmp_path, d, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return str(p)


def test_simulate_default(tmp_path):
    out = tmp_path / "out"
    assert main(["simulate", "--config", write_cfg(tmp_path, {}), "--out", str(out)]) == 0
    assert (out / "base_trace.csv").exists()
    s = json.loads((out / "summary.json").read_text())
    assert s["duty_factor"] == pytest.approx(26.2, abs=1.0)
    assert s["steps_completed"] == 100 and s["failure"] is None
    assert (out / "base_trace.csv").read_text().startswith(f"# config_hash={s['config_hash']}")


def test_simulate_bad_stiffness(tmp_path, capsys):
    out = tmp_path / "o"
    code = main(["simulate", "--config", write_cfg(tmp_path, {"params": {"k": 0}}), "--out", str(out)])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["field"] == "params.k"
    assert json.loads((out / "error.json").read_text())["field"] == "params.k"


def test_unknown_key_rejected(tmp_path):
    for bad in ({"bogus": 1}, {"params": {"mass": 80}}, {"gains": {"kp": 1}}):
        assert main(["simulate", "--config", write_cfg(tmp_path, bad), "--out", str(tmp_path / "o")]) == 2


def test_missing_config_file(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_bad_args_exit_2():
    assert main(["simulate"]) == 2
    assert main(["frobnicate"]) == 2


def test_convergence_failure_exit_3(tmp_path):
    # a stiff heavy model has no gait near the default seed
    cfg = write_cfg(tmp_path, {"params": {"k": 2000.0}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_simulate_deterministic(tmp_path):
    cfg = write_cfg(tmp_path, {"steps": 5})
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "b")])
    for f in ("base_trace.csv", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_perturb_null_and_pair(tmp_path):
    cfg = write_cfg(tmp_path, {})
    out = tmp_path / "p"
    assert main(["perturb", "--config", cfg, "--dz", "0,-0.10,-0.40", "--steps", "3",
                 "--out", str(out)]) == 0
    rep = json.loads((out / "recovery_report.json").read_text())
    r0, r1, r4 = rep["runs"]
    assert r0["recovery_step"] == 0 and r0["final_deviation"] < 1e-6
    assert r0["step0_peak_vgrf"] == pytest.approx(rep["base"]["peak_vgrf"], rel=1e-9)
    assert r1["step0_peak_vgrf"] < r4["step0_peak_vgrf"]
    assert (out / r1["file"]).read_text().startswith(f"# config_hash={rep['config_hash']}")


def test_perturb_sweep_matches_serial(tmp_path):
    cfg = write_cfg(tmp_path, {})
    main(["perturb", "--config", cfg, "--dz", "-0.1,-0.2", "--steps", "2", "--out", str(tmp_path / "s")])
    main(["perturb", "--config", cfg, "--dz", "-0.1,-0.2", "--steps", "2", "--out", str(tmp_path / "w"),
          "--sweep"])
    for f in ("recovery_report.json", "perturb_dzm0.100.csv", "perturb_dzm0.200.csv"):
        assert (tmp_path / "s" / f).read_bytes() == (tmp_path / "w" / f).read_bytes()


def test_perturb_bad_dz(tmp_path):
    cfg = write_cfg(tmp_path, {})
    assert main(["perturb", "--config", cfg, "--dz", "0.2", "--out", str(tmp_path / "o")]) == 2
    assert main(["perturb", "--config", cfg, "--dz", "abc", "--out", str(tmp_path / "o")]) == 2


def test_analyze_empty_dir(tmp_path, capsys):
    (tmp_path / "data").mkdir()
    assert main(["analyze", "--data", str(tmp_path / "data"), "--out", str(tmp_path / "o")]) == 2
    assert "no trials found" in capsys.readouterr().err


def test_analyze_simulated_corpus(tmp_path, base):
    data = tmp_path / "data"
    for i, subj in enumerate(("s1", "s2")):
        cols, meta = export_step_as_trial(base.step, ModelParams(), subject=subj)
        write_trial(data / f"trial{i}", cols, meta)
    out = tmp_path / "o"
    assert main(["analyze", "--data", str(data), "--variant", "90", "--out", str(out)]) == 0
    s = json.loads((out / "summary.json").read_text())
    v0 = s["conditions"]["V0/step0"]
    assert abs(v0["vp_z"]["mean"] + 0.30) < 0.05
    assert v0["r2"]["mean"] > 99.0
    assert v0["subjects"] == 2
    assert (out / "trials.csv").read_text().startswith(f"# config_hash={s['config_hash']}")


def test_config_round_trip():
    cfg = RunConfig.from_dict({"params": {"c": 0.0}, "gains": {"k_vp": 0.1, "scheduled": False},
                               "terrain": {"dz": -0.2, "step": 1}, "steps": 7})
    again = RunConfig.from_dict(json.loads(cfg.to_json()))
    assert again.to_dict() == cfg.to_dict()
    assert again.hash == cfg.hash
    assert RunConfig().hash != cfg.hash


@pytest.mark.parametrize("bad,field", [
    ({"params": {"c": -1}}, "params.c"),
    ({"steps": 0}, "steps"),
    ({"steps": 1.5}, "steps"),
    ({"terrain": {"dz": 0.5}}, "terrain.dz"),
    ({"gains": {"k_vp": "x"}}, "gains.k_vp"),
    ({"targets": {"speed": 20}}, "targets"),
])
def test_config_validation(bad, field):
    with pytest.raises(ConfigError) as ei:
        RunConfig.from_dict(bad)
    assert ei.value.field == field
