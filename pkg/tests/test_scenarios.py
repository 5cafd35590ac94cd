import math

import numpy as np
import pytest

import oracles
from inrange.costs import RangeSpec, SmoothingParams
from inrange.ocp import ReferenceSignal, Trajectory
from inrange.scenarios import (
    BatteryModel,
    ChargingModel,
    FixedWingModel,
    ScenarioConfig,
    compute_metrics,
    make_scenario,
)
from runs import grid_interval, shipped_run


def test_hover_drain_over_100s():
    rate, *_ = BatteryModel().soc_rate(np.array([0.0]), np.array([0.0]), np.array([0.0]))
    assert -rate[0] * 100.0 == pytest.approx(oracles.BATTERY_HOVER_100S)


def test_charging_constant_term():
    b = BatteryModel(charging=ChargingModel(base_position=-18.0))
    at_base, _ = b.constant_term(np.array([-18.0]))
    far, _ = b.constant_term(np.array([1e3]))
    assert at_base[0] == pytest.approx(oracles.CHARGING_AT_BASE)
    assert far[0] == pytest.approx(oracles.CHARGING_FAR)


def test_charging_derivative_matches_difference():
    b = BatteryModel(charging=ChargingModel())
    x = np.linspace(-25, -10, 7)
    _, d = b.constant_term(x)
    h = 1e-6
    fd = (b.constant_term(x + h)[0] - b.constant_term(x - h)[0]) / (2 * h)
    np.testing.assert_allclose(d, fd, rtol=1e-6, atol=1e-10)


def test_endurance_speed_and_footprint():
    fw = FixedWingModel()
    assert fw.optimal_speed == pytest.approx(oracles.V_STAR, rel=1e-12)
    assert fw.power_grad(fw.optimal_speed) == pytest.approx(0.0, abs=1e-12)
    for z, r in oracles.FOOTPRINT.items():
        assert fw.footprint(z) == pytest.approx(r)


def test_power_curve_is_convex():
    fw = FixedWingModel()
    V = np.linspace(fw.speed_min, fw.speed_max, 200)
    assert np.all(np.diff(fw.power(V), 2) > 0)


def _traj(times, x):
    x = np.asarray(x, dtype=float)
    states = np.column_stack([x, np.zeros_like(x), 100.0 - times])
    return Trajectory(times, states, np.zeros((times.size, 1)))


def _spec(delta=1.5):
    return RangeSpec(ReferenceSignal.sinusoid(2.0, 10.0), delta, -2.0, 0.0)


def test_metrics_always_at_reference_is_full_horizon():
    t = np.linspace(0, 10, 101)
    spec = _spec()
    m = compute_metrics(_traj(t, spec.reference(t)[:, 0]), spec)
    assert m.in_range_time == (10.0,)
    assert m.any_in_range_time == m.all_in_range_time == 10.0
    assert m.energy_used[0] == pytest.approx(10.0)


def test_metrics_out_of_range_is_zero():
    t = np.linspace(0, 10, 101)
    spec = _spec()
    m = compute_metrics(_traj(t, spec.reference(t)[:, 0] + 2 * spec.delta), spec)
    assert m.in_range_time == (0.0,)


def test_metrics_half_in_range():
    t = np.linspace(0, 10, 101)
    spec = _spec()
    off = np.where(t < 5.0, 0.0, 3 * spec.delta)
    m = compute_metrics(_traj(t, spec.reference(t)[:, 0] + off), spec)
    assert abs(m.in_range_time[0] - 5.0) <= t[1] - t[0]


def test_boundary_counts_as_in_range():
    t = np.linspace(0, 10, 11)
    spec = _spec()
    m = compute_metrics(_traj(t, spec.reference(t)[:, 0] + spec.delta * (1 + 1e-9)), spec)
    assert m.in_range_time == (10.0,)


def test_nair_stage_cost_in_range_is_alpha():
    sc = make_scenario("single_1d", "nair", ScenarioConfig(tf=10.0, K=10, reference=ReferenceSignal.constant([0.0])))
    params = SmoothingParams(k1=50.0, k2=1e5)
    f = sc.agent_costs(params)
    X = np.zeros((3, 3))
    ev = f(X, np.zeros((3, 1)), np.zeros(0), np.array([0.0, 1.0, 2.0]))
    np.testing.assert_allclose(ev.value[:, 0], -2.0, atol=1e-6)


def test_unknown_scenario_and_formulation():
    from inrange.ocp import OcpValidationError

    with pytest.raises(OcpValidationError):
        make_scenario("nope", "nair", ScenarioConfig())
    with pytest.raises(OcpValidationError):
        make_scenario("single_1d", "nope", ScenarioConfig())


# -- solved shipped scenarios (shared with the acceptance tests)


@pytest.mark.slow
def test_single_air_hard_is_infeasible():
    res, _ = shipped_run("single_1d_air_hard")
    assert res.status == "diverged"


@pytest.mark.slow
def test_single_formulations_ordering():
    t = {f: shipped_run(f"single_1d_{f}")[0].metrics.any_in_range_time for f in ("setpoint", "air_soft", "nair")}
    assert t["nair"] >= t["air_soft"] >= t["setpoint"]


@pytest.mark.slow
def test_single_equal_budget():
    for f in ("setpoint", "air_soft", "nair"):
        res, _ = shipped_run(f"single_1d_{f}")
        assert res.converged
        assert res.metrics.final_soc[0] >= res.scenario.config.final_soc_min - 1e-6


@pytest.mark.slow
def test_multi_returns_to_base_and_drains_without_charging():
    res, _ = shipped_run("multi_1d_nocharge")
    assert res.converged
    sc = res.scenario
    for i in range(sc.agent_count):
        S = res.trajectory.agent_states(i, 3)
        assert S[0, 0] == pytest.approx(sc.config.base_position, abs=1e-6)
        assert S[-1, 0] == pytest.approx(sc.config.base_position, abs=1e-5)
        assert np.all(np.diff(S[:, 2]) < 0)


@pytest.mark.slow
def test_charging_raises_soc_at_base():
    res, _ = shipped_run("multi_1d_charging")
    assert res.converged
    grew = False
    for i in range(res.scenario.agent_count):
        S = res.trajectory.agent_states(i, 3)
        grew = grew or bool(np.any(np.diff(S[:, 2]) > 0))
    assert grew


@pytest.mark.slow
def test_fixedwing_stays_in_footprint_near_endurance_speed():
    res, _ = shipped_run("fixedwing_3d_air_hard")
    assert res.converged
    assert res.metrics.any_in_range_time == pytest.approx(res.metrics.horizon)
    V = res.trajectory.states[:, 4]
    assert abs(np.median(V) - oracles.V_STAR) <= 0.05 * oracles.V_STAR


@pytest.mark.slow
def test_in_range_times_are_grid_multiples():
    res, _ = shipped_run("single_1d_nair")
    dt = grid_interval(res)
    k = res.metrics.any_in_range_time / (0.5 * dt)
    assert k == pytest.approx(round(k), abs=1e-9)
