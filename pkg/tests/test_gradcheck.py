import numpy as np
import pytest

from inrange.config import load_config, shipped_config, shipped_configs
from inrange.gradcheck import check_config_gradients, check_nlp_gradients, directional_error, sample_points
from problems import dense_nlp
from runs import grid_interval, shipped_run


def _rosenbrock(z):
    x, y = z
    g = np.array([-2 * (1 - x) - 400 * x * (y - x * x), 200 * (y - x * x)])
    return (1 - x) ** 2 + 100 * (y - x * x) ** 2, g


def _circle(z):
    return np.array([z @ z - 1.0]), 2.0 * z[None, :]


def _nlp(bad=False):
    def obj(z):
        v, g = _rosenbrock(z)
        return v, g * (1.02 if bad else 1.0)

    return dense_nlp(2, obj, eq=(1, _circle), lower=[-3, -3], upper=[3, 3])


def test_directional_difference_is_accurate():
    z = np.array([0.3, -0.7])
    d = np.array([1.0, 2.0])
    a, fd = directional_error(lambda zz: _rosenbrock(zz), z, d, 1e-2)
    assert np.max(np.abs(a - fd)) < 1e-8 * np.max(np.abs(a))


def test_correct_derivatives_pass():
    rng = np.random.default_rng(1)
    nlp = _nlp()
    rep = check_nlp_gradients(nlp, sample_points(nlp, np.zeros(2), 20, rng), rng)
    assert rep.samples == 20
    assert rep.max_error < 1e-8


def test_wrong_gradient_is_the_worst_offender():
    rng = np.random.default_rng(1)
    nlp = _nlp(bad=True)
    rep = check_nlp_gradients(nlp, sample_points(nlp, np.zeros(2), 20, rng), rng)
    assert rep.max_error > 1e-3
    assert rep.worst.name == "objective"
    assert rep.blocks["eq"].max_error < 1e-8
    assert any(line.startswith("worst offender: objective") for line in rep.lines())


def test_sabotage_flags_named_block():
    rng = np.random.default_rng(2)
    nlp = _nlp()
    rep = check_nlp_gradients(nlp, sample_points(nlp, np.zeros(2), 5, rng), rng, sabotage="eq")
    assert rep.worst.name == "eq"
    assert rep.blocks["eq"].max_error == pytest.approx(0.01 / 1.01, rel=1e-3)


def test_samples_stay_inside_bounds():
    rng = np.random.default_rng(3)
    nlp = dense_nlp(3, lambda z: (0.0, np.zeros(3)), lower=[0, -1, -np.inf], upper=[1, 1, np.inf])
    for z in sample_points(nlp, np.array([0.99, 0.0, 5.0]), 50, rng, spread=10.0):
        assert np.all(z > nlp.lower) and np.all(z < nlp.upper)


@pytest.mark.parametrize("path", shipped_configs(), ids=lambda p: p.stem)
def test_shipped_config_gradients(path):
    reports = check_config_gradients(load_config(path), samples=8, seed=0)
    assert reports
    for label, rep in reports:
        assert rep.max_error < 1e-6, (label, rep.lines())


@pytest.mark.slow
def test_mpcc_agrees_with_smooth_max():
    res, _ = shipped_run("multi_1d_mpcc")
    assert res.converged
    smooth = [r for r in res.stages if r["kind"] == "smooth_max"][-1]
    mpcc = [r for r in res.stages if r["kind"] == "mpcc"][-1]
    dt = grid_interval(res)
    for a, b in zip(smooth["in_range_time"], mpcc["in_range_time"]):
        assert abs(a - b) <= 2 * dt
    assert abs(mpcc["objective"] - smooth["objective"]) <= 1e-2 * abs(smooth["objective"])
    assert res.metrics.in_range_time == tuple(mpcc["in_range_time"])
