"""End-to-end acceptance checks, one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the summary lines are
printed regardless of output capturing.
"""

import subprocess
import sys
import time

import numpy as np
import pytest

import oracles
from inrange import costs
from inrange.config import load_config, shipped_config
from inrange.costs import SmoothingParams
from inrange.gradcheck import check_config_gradients
from inrange.mpcc import mpcc_min_value
from inrange.solver import solve
from inrange.transcription import Mesh, Transcription
from problems import double_integrator_ocp
from runs import grid_interval, shipped_run

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail, seconds=None):
        took = "" if seconds is None else f" [{seconds:.1f} s]"
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}{took}")
        assert ok, detail

    return emit


def _runs(*names):
    out = [shipped_run(n) for n in names]
    return [r for r, _ in out], sum(w for _, w in out)


def test_criterion_01_multi_agent_example(report):
    plain = SmoothingParams(rho=1.0)
    both = costs.multi_agent_nair_cost(np.array([-2.0, -2.0]), plain, "plain")
    one = costs.multi_agent_nair_cost(np.array([-2.0, 0.0]), plain, "plain")
    clipped = costs.multi_agent_nair_cost(np.array([-2.0, 0.0]), SmoothingParams(rho=1.0, gamma=6.0), "clipped", alpha=-2.0)
    tol = oracles.MULTI_TOL
    ok = (
        abs(both - oracles.MULTI_PLAIN_BOTH_IN) <= tol
        and abs(one - oracles.MULTI_PLAIN_ONE_IN) <= tol
        and abs(clipped - oracles.MULTI_CLIPPED) <= tol
    )
    report(1, ok, f"plain {both:.4f} / {one:.4f}, clipped {clipped:.4f}")


def test_criterion_02_double_integrator(report):
    t = time.perf_counter()
    tr = Transcription(double_integrator_ocp(), Mesh(40))
    sol = solve(tr.nlp, np.zeros(tr.nlp.n))
    wall = time.perf_counter() - t
    traj = tr.decode(sol.z)
    u_star = oracles.double_integrator_input(traj.times)
    rms = np.sqrt(np.mean((traj.inputs[:, 0] - u_star) ** 2)) / np.sqrt(np.mean(u_star ** 2))
    J = oracles.DOUBLE_INTEGRATOR_J
    ok = sol.converged and abs(sol.objective - J) <= 0.01 * J and rms <= 0.02 and wall < 5.0
    report(2, ok, f"J = {sol.objective:.5f}, input RMS error {100 * rms:.3f}%", wall)


GRADIENT_GROUPS = {
    "single_1d": ("single_1d_setpoint", "single_1d_air_soft", "single_1d_air_hard", "single_1d_nair"),
    "multi_1d": ("multi_1d_nocharge", "multi_1d_mpcc"),
    "fixedwing_3d": ("fixedwing_3d_setpoint", "fixedwing_3d_air_hard"),
}


@pytest.mark.parametrize("scenario", sorted(GRADIENT_GROUPS))
def test_criterion_03_gradients(report, scenario):
    t = time.perf_counter()
    worst, where = 0.0, ""
    for name in GRADIENT_GROUPS[scenario]:
        for label, rep in check_config_gradients(load_config(shipped_config(name)), samples=100, seed=0):
            assert rep.samples == 100
            if rep.max_error >= worst:
                worst, where = rep.max_error, f"{label} {rep.worst.name}"
    wall = time.perf_counter() - t
    report(3, worst < 1e-6 and wall < 30.0, f"{scenario}: max relative error {worst:.2e} ({where})", wall)


def test_criterion_04_ks_bounds(report):
    rng = np.random.default_rng(4)
    failures = 0
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        v = rng.uniform(-10, 10, n)
        rho = float(rng.choice([0.5, 1.0, 10.0]))
        ks = costs.smooth_max(v, rho)
        if not (v.max() <= ks <= v.max() + np.log(n) / rho):
            failures += 1
    report(4, failures == 0, f"{1000 - failures}/1000 sets within [max, max + log(n)/rho]")


def test_criterion_05_mpcc(report):
    rng = np.random.default_rng(5)
    l1, l2 = rng.uniform(-3, 3, (2, 1000))
    ends = np.minimum(mpcc_min_value(l1, l2, np.full(1000, -1.0)), mpcc_min_value(l1, l2, np.zeros(1000)))
    exact_ends = bool(np.array_equal(ends, np.minimum(l1, l2)))
    res, wall = shipped_run("multi_1d_mpcc")
    smooth = [r for r in res.stages if r["kind"] == "smooth_max"][-1]
    final = [r for r in res.stages if r["kind"] == "mpcc"][-1]
    dt = grid_interval(res)
    gap = max(abs(a - b) for a, b in zip(smooth["in_range_time"], final["in_range_time"]))
    ok = exact_ends and res.converged and final["epsilon"] == pytest.approx(1e-4) and gap <= 2 * dt and wall < 60.0
    report(5, ok, f"endpoints exact on 1000 pairs: {exact_ends}; in-range gap {gap:g} s (grid {dt:g} s)", wall)


def test_criterion_06_single_formulations(report):
    (sp_, soft, nair), wall = _runs("single_1d_setpoint", "single_1d_air_soft", "single_1d_nair")
    t = [r.metrics.any_in_range_time for r in (nair, soft, sp_)]
    ok = all(r.converged for r in (sp_, soft, nair)) and t[0] >= t[1] >= t[2] and t[0] >= 1.10 * t[2] and wall < 60.0
    report(6, ok, f"nair {t[0]:g} s >= air_soft {t[1]:g} s >= setpoint {t[2]:g} s (ratio {t[0] / t[2]:.3f})", wall)


def test_criterion_07_charging(report):
    (plain, charging), wall = _runs("multi_1d_nocharge", "multi_1d_charging")
    a, b = plain.metrics, charging.metrics
    ok = (
        plain.converged
        and charging.converged
        and b.any_in_range_time > a.any_in_range_time
        and b.all_in_range_time < a.all_in_range_time
        and wall < 120.0
    )
    report(
        7,
        ok,
        f"any agent {a.any_in_range_time:g} -> {b.any_in_range_time:g} s, both {a.all_in_range_time:g} -> {b.all_in_range_time:g} s",
        wall,
    )


def test_criterion_08_fixedwing(report):
    (hard, setpoint), wall = _runs("fixedwing_3d_air_hard", "fixedwing_3d_setpoint")
    V = float(np.median(hard.trajectory.states[:, 4]))
    e_hard, e_set = hard.metrics.energy_used[0], setpoint.metrics.energy_used[0]
    ok = hard.converged and setpoint.converged and abs(V - oracles.V_STAR) <= 0.05 * oracles.V_STAR and e_hard < e_set and wall < 120.0
    report(8, ok, f"median airspeed {V:.3f} m/s (V* {oracles.V_STAR:.3f}), energy {e_hard:.3f} vs setpoint {e_set:.3f}", wall)


def test_criterion_09_multi_continuation(report):
    res, wall = shipped_run("multi_1d_nocharge")
    stages = res.stages
    times = [r["any_in_range_time"] for r in stages]
    ok = all(r["status"] == "converged" for r in stages) and times[-1] >= times[0] and wall < 120.0
    report(9, ok, f"stage statuses {[r['status'] for r in stages]}, in-range {times}", wall)


def test_criterion_10_deterministic_metrics(report, tmp_path):
    cfg = str(shipped_config("single_1d_nair"))
    blobs = []
    for k in range(3):
        out = tmp_path / f"run{k}"
        proc = subprocess.run([sys.executable, "-m", "inrange", "solve", "--config", cfg, "--out", str(out)], capture_output=True)
        assert proc.returncode == 0, proc.stderr.decode()
        blobs.append((out / "metrics.json").read_bytes())
    ok = all(b == blobs[0] for b in blobs)
    report(10, ok, f"{len(blobs)} solves, metrics.json byte-identical: {ok}")
