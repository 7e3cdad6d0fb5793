import math

import numpy as np
import pytest

from vpsim.errors import ConvergenceError
from vpsim.experiments import (GaitTargets, energy_accounting, find_base_gait, fold_change,
                               grf_metrics, recovery_step, stepdown_experiment)
from vpsim.model import ModelParams, spring_energy
from vpsim.sim import simulate_step

P = ModelParams()


def test_base_gait_targets(base):
    m = base.metrics
    assert m.duty_factor == pytest.approx(26.2, abs=1.0)
    assert m.stance_time == pytest.approx(0.16, abs=0.01)
    assert m.trunk_excursion == pytest.approx(4.45, abs=0.5)
    assert base.residual < 1e-8
    assert m.apex_speed == pytest.approx(5.0, abs=1e-8)


def test_base_gait_idempotent(base):
    seed = (base.apex[1], base.apex[2], base.apex[5], base.theta_td)
    again = find_base_gait(seed=seed)
    assert np.allclose(again.apex, base.apex, atol=1e-8)
    assert again.theta_td == pytest.approx(base.theta_td, abs=1e-8)
    assert again.iterations <= 1


def test_base_gait_bad_seed():
    with pytest.raises(ConvergenceError):
        find_base_gait(seed=(0.5, 0.0, 0.0, 1.98))


def test_target_range():
    with pytest.raises(ValueError):
        GaitTargets(speed=9.0)


def test_equilibrium_grf(base):
    m = base.metrics
    assert m.peak_vgrf == pytest.approx(3.0, abs=0.2)
    assert m.peak_hgrf == pytest.approx(0.6, abs=0.1)
    assert abs(m.norm_impulse_x) < 0.01
    assert m.norm_impulse_z == pytest.approx(1.0, abs=0.05)
    assert m.braking_x < 0 < m.propulsion_x
    assert m.braking_x + m.propulsion_x == pytest.approx(m.impulse_x, abs=1e-9)
    assert not m.no_crossing


def test_spring_energy_closed_form():
    assert spring_energy(0.9, P) == pytest.approx(90.0)
    assert spring_energy(1.0, P) == 0.0


def test_energy_trace_properties(base):
    tr = energy_accounting(base.step, P, base)
    assert tr.spring[0] == 0.0 and tr.spring[-1] == 0.0
    assert np.all(tr.spring >= 0)
    assert np.all(np.diff(tr.damper_loss) >= -1e-12)
    assert abs(tr.balance_residual) < 1e-6
    # periodic gait: hip supplies what the damper takes
    assert tr.hip_work[-1] == pytest.approx(tr.damper_loss[-1], abs=1e-6)
    assert all(abs(v) < 1e-12 for v in tr.fold_changes.values())
    assert tr.hip_work_pos[-1] + tr.hip_work_neg[-1] == pytest.approx(tr.hip_work[-1])
    # spring energy peaks near the lowest CoM point
    assert tr.spring.max() == pytest.approx(0.5 * P.k * base.metrics.max_leg_deflection ** 2,
                                            rel=1e-3)


def test_fold_change():
    assert fold_change(2.0, 3.0) == 0.5
    assert fold_change(2.0, 2.0) == 0.0


def test_recovery_step_logic():
    assert recovery_step([0.5, 0.2, 0.005, 0.001]) == 2
    assert recovery_step([0.5, 0.005, 0.2, 0.001]) == 3
    assert recovery_step([0.5, 0.2]) is None


def test_null_perturbation(base):
    run = stepdown_experiment(base, 0.0, 10)
    assert not run.failed
    assert max(run.deviations) < 1e-6
    assert run.recovery_step == 0
    assert abs(run.energy_audit) < 1e-5


def test_small_drop_step0(base):
    run = stepdown_experiment(base, -0.10, 3)
    m0 = run.metrics[0]
    assert 3.8 <= m0.peak_vgrf <= 4.6
    assert 1.3 <= m0.norm_impulse_z <= 1.5
    assert run.metrics[1].hip_work < 0
    # controllers act only from step 1
    assert run.steps[0].controls.theta_td == base.theta_td
    assert run.steps[1].controls.theta_td != base.theta_td


def test_step0_monotone_in_drop(base):
    peaks = [stepdown_experiment(base, dz, 1).metrics[0].peak_vgrf
             for dz in (0.0, -0.1, -0.2, -0.3, -0.4)]
    assert all(b >= a for a, b in zip(peaks, peaks[1:]))


def test_grf_metrics_no_crossing_flag(base):
    rec = simulate_step(base.apex, base.controls, 0.0, P)
    rec.braking_impulse = None
    m = grf_metrics(rec, P)
    assert m.no_crossing
    assert m.braking_x + m.propulsion_x == pytest.approx(m.impulse_x)


def test_dz_range(base):
    with pytest.raises(ValueError):
        stepdown_experiment(base, 0.1, 1)
