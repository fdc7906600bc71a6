from dataclasses import replace

import numpy as np
import pytest

from formctl.errors import BoundViolated, NumericalBlowup, ValidationError, ZetaViolated
from formctl.maneuver import ManeuverPlan, Segment
from formctl.sim import (SimConfig, SimTrace, leader_monte_carlo, run_dt_ladder, run_scenario,
                         tracking_errors, verify_bounds)

from conftest import pipeline


def _run(name, variant=None, **cfg):
    pl = pipeline(name, variant)
    scn = pl.scenario
    return pl, run_scenario(pl.mats, scn.plan, pl.gains, replace(scn.sim, **cfg), variant=pl.variant)


def test_equilibrium_stays_put():
    pl, tr = _run("equilibrium")
    errs = tracking_errors(tr, pl.scenario.plan)
    eps = pl.scenario.sim.epsilon
    assert errs.leader.max() <= 10 * eps
    assert errs.follower.max() <= 10 * eps
    assert errs.formation.max() <= 10 * eps


def test_config_validation():
    with pytest.raises(ValidationError):
        SimConfig(dt=0.02)
    with pytest.raises(ValidationError):
        SimConfig(integrator="rk45")
    with pytest.raises(ValidationError):
        SimConfig(leader_error=-1.0)
    with pytest.raises(ValidationError):
        _run("line_m1", dt=3e-3, t_end=1.0)          # not a whole number of steps
    with pytest.raises(ValidationError):
        _run("line_m1", t_end=11.0)                  # past the plan


def test_variant_must_match_gains():
    pl = pipeline("planar_six")
    assert pl.variant == "state-feedback"
    with pytest.raises(ValidationError):
        run_scenario(pl.mats, pl.scenario.plan, pl.gains, pl.scenario.sim, variant="omega-hat")
    with pytest.raises(ValidationError):
        run_scenario(pl.mats, pl.scenario.plan, pl.gains, pl.scenario.sim, variant="bogus")


def test_zeta_violation_is_rejected():
    pl = pipeline("paper_sec5")
    cfg = replace(pl.scenario.sim, leader_error=1.0, t_end=0.1, assert_bounds=True)
    with pytest.raises(ZetaViolated):
        run_scenario(pl.mats, pl.scenario.plan, pl.gains, cfg)
    # the same start is allowed when the assertion is off
    run_scenario(pl.mats, pl.scenario.plan, pl.gains, replace(cfg, assert_bounds=False))


def test_blowup_carries_partial_trace():
    pl = pipeline("line_m1")
    cfg = replace(pl.scenario.sim, blowup=1e-6, follower_error=1.0, t_end=1.0)
    with pytest.raises(NumericalBlowup) as info:
        run_scenario(pl.mats, pl.scenario.plan, pl.gains, cfg)
    tr = info.value.trace
    assert isinstance(tr, SimTrace) and tr.times.size >= 1 and tr.times[-1] < 1.0


def test_determinism_and_seed_dependence():
    _, a = _run("paper_sec5", t_end=0.5)
    _, b = _run("paper_sec5", t_end=0.5)
    _, c = _run("paper_sec5", t_end=0.5, seed=8)
    for name in ("x", "eta", "u"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(a.x[0], c.x[0])


@pytest.mark.parametrize("variant", ["omega-hat", "relative", "state-feedback"])
def test_follower_error_recomputed(variant):
    pl, tr = _run("paper_sec5", variant, t_end=0.5)
    sigma = np.linalg.solve(pl.mats.omega_ff, pl.mats.omega_fl)
    z = np.concatenate([tr.x, tr.eta], axis=2) if variant == "omega-hat" else tr.x
    expected = z[:, 4:] + np.einsum("fl,sld->sfd", sigma, z[:, :4])
    np.testing.assert_allclose(tr.follower_error, expected, atol=1e-12)
    np.testing.assert_allclose(tr.leader_error, tr.x[:, :4] - tr.xstar[:, :4], atol=0)


def test_samples_include_final_step():
    _, tr = _run("line_m1", t_end=0.105, sample_every=10)
    np.testing.assert_allclose(tr.times[-2:], [0.1, 0.105])


def test_rk4_order_without_sign_term():
    pl = pipeline("planar_six")
    assert pl.gains.c2 == 0.0
    cfg = replace(pl.scenario.sim, t_end=2.0)
    traces, diffs, orders = run_dt_ladder(pl.mats, pl.scenario.plan, pl.gains, cfg,
                                          dts=(8e-3, 4e-3, 2e-3), variant=pl.variant)
    assert len({tr.epsilon_eff for tr in traces}) == 1
    assert 3.7 < orders[0] < 4.3, (diffs, orders)


def test_euler_is_first_order():
    pl = pipeline("planar_six")
    cfg = replace(pl.scenario.sim, t_end=2.0, integrator="euler")
    _, diffs, orders = run_dt_ladder(pl.mats, pl.scenario.plan, pl.gains, cfg,
                                     dts=(8e-3, 4e-3, 2e-3), variant=pl.variant)
    assert 0.8 < orders[0] < 1.2, (diffs, orders)


def test_static_zero_zeta_bound_holds():
    pl, tr = _run("static_m1")
    assert pl.gains.gamma_u == 0.0
    report = verify_bounds(tr, pl.gains)
    assert report.ok and report.sup_norm.max() <= 1e-12


def test_bound_violation_is_flagged():
    pl = pipeline("paper_sec5")
    cfg = replace(pl.scenario.sim, t_end=1.0)
    tr = run_scenario(pl.mats, pl.scenario.plan, pl.gains, cfg)
    sup = np.linalg.norm(tr.u[:, :4], axis=2).max()
    tight = replace(pl.gains, gamma_u=0.5 * sup)
    report = verify_bounds(tr, tight, raise_on_violation=False)
    assert not report.ok and report.slack < 0
    with pytest.raises(BoundViolated) as info:
        verify_bounds(tr, tight)
    assert "zeta" in str(info.value)
    assert 0 <= info.value.leader < 4


def test_monte_carlo_is_independent_of_grouping():
    pl = pipeline("equilibrium")
    cfg = replace(pl.scenario.sim, t_end=1.0)
    a = leader_monte_carlo(pl.scenario.plan, pl.gains, 6, cfg, jobs=1)
    b = leader_monte_carlo(pl.scenario.plan, pl.gains, 6, cfg, jobs=3)
    np.testing.assert_array_equal(a.sup_norm, b.sup_norm)


def test_segment_tails_and_boundaries():
    r_l = np.zeros((2, 3))
    plan = ManeuverPlan((Segment(0.0, 1.0), Segment(1.0, 2.0)), r_l)
    t = np.round(np.arange(0, 2.0001, 0.1), 12)
    S = t.size
    le = np.zeros((S, 2, 3))
    le[:, 0, 0] = t
    tr = SimTrace(times=t, x=np.zeros((S, 3, 3)), eta=np.zeros((S, 3, 3)), u=np.zeros((S, 3, 3)),
                  xstar=np.zeros((S, 3, 3)), leader_error=le, follower_error=np.zeros((S, 1, 3)),
                  n_l=2, m=1, variant="state-feedback", epsilon=1e-3, epsilon_eff=1e-3, dt=0.1,
                  integrator="rk4", backend="python")
    errs = tracking_errors(tr, plan)
    s0, s1 = errs.segment(0.0), errs.segment(1.0)
    assert s0.tail_start == pytest.approx(0.8) and s0.tail_leader_max == pytest.approx(0.9)
    assert s1.tail_leader_max == pytest.approx(2.0) and s1.terminal_leader == pytest.approx(2.0)
