import warnings

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from inrange import costs
from inrange.costs import RangeSpec, SmoothingParams
from inrange.ocp import OcpValidationError, ReferenceSignal

import oracles

REF = ReferenceSignal.constant(1.5)
SPEC = RangeSpec(REF, 1.5, -2.0, 0.0)
XR = 1.5


def fd(f, x, h=1e-6):
    return (f(x + h) - f(x - h)) / (2 * h)


# -- exact forms ---------------------------------------------------------------


@pytest.mark.parametrize("x,expected", [(1.5, -2.0), (3.0, -2.0), (3.1, 0.0), (0.0, -2.0), (-0.1, 0.0)])
def test_indicator_cost(x, expected):
    assert costs.indicator_cost(x, XR, SPEC) == expected


@settings(max_examples=200, deadline=None)
@given(st.floats(-1.4999, 1.4999), st.floats(-1.4999, 1.4999), st.floats(1.5001, 1e3), st.booleans())
def test_indicator_invariance(a, b, c, sign):
    assert costs.indicator_cost(XR + a, XR, SPEC) == costs.indicator_cost(XR + b, XR, SPEC) == SPEC.alpha
    out = XR + (c if sign else -c)
    assert costs.indicator_cost(out, XR, SPEC) == SPEC.beta


def test_air_residual():
    assert costs.air_constraint_residual(XR, XR, SPEC) == pytest.approx(-2.25)
    assert costs.air_constraint_residual(XR + 1.5, XR, SPEC) == pytest.approx(0.0, abs=1e-14)


def test_air_residual_gradient():
    for e in (-2.0, 0.3, 1.7):
        g = costs.air_constraint_residual_grad(XR + e, XR, SPEC)
        assert g == pytest.approx(fd(lambda x: costs.air_constraint_residual(x, XR, SPEC), XR + e), rel=1e-6)


def test_multi_air_residual_nearest_agent():
    spec = RangeSpec(ReferenceSignal.constant(0.0), 1.5)
    xs = np.array([0.5, 3.0])
    val = costs.multi_air_constraint_residual(xs, 0.0, spec, rho=1e3)
    assert val == pytest.approx(oracles.MULTI_RESIDUAL_NEAREST, abs=1e-3)
    assert val <= oracles.MULTI_RESIDUAL_NEAREST


def test_multi_air_residual_gradient():
    spec = RangeSpec(ReferenceSignal.constant(0.0), 1.5)
    xs = np.array([0.7, -1.9])
    g = costs.multi_air_constraint_residual_grad(xs, 0.0, spec, rho=2.0)
    for i in range(2):
        def f(v, i=i):
            y = xs.copy()
            y[i] = v
            return costs.multi_air_constraint_residual(y, 0.0, spec, rho=2.0)

        assert np.ravel(g)[i] == pytest.approx(fd(f, xs[i]), rel=1e-6)


# -- smoothed indicator --------------------------------------------------------


def test_smooth_inrange_deep_inside():
    assert costs.smooth_inrange_cost(XR, XR, SPEC, 100.0) == pytest.approx(-2.0, abs=1e-10)


def test_smooth_inrange_on_boundary():
    assert costs.smooth_inrange_cost(XR + 1.5, XR, SPEC, 1e3) == pytest.approx(-1.0, abs=1e-12)


def test_smooth_inrange_value():
    assert costs.smooth_inrange_cost(XR + 2.0, XR, SPEC, 1.0) == pytest.approx(oracles.SMOOTH_INRANGE_E2_K1, abs=1e-12)
    assert costs.smooth_inrange_cost(XR + 2.0, XR, SPEC, 1.0) == pytest.approx(-0.5361, abs=1e-4)


@pytest.mark.parametrize("e", [0.0, 1.0, 1.5, 2.0, 5.0])
@pytest.mark.parametrize("k1", [1.0, 10.0])
def test_smooth_inrange_gradient(e, k1):
    g = costs.smooth_inrange_cost_grad(XR + e, XR, SPEC, k1)
    num = fd(lambda x: costs.smooth_inrange_cost(x, XR, SPEC, k1), XR + e)
    assert abs(g - num) <= 1e-6 * max(abs(num), 1e-8) + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 50), st.floats(0.1, 100))
def test_smooth_inrange_symmetry(a, k1):
    lhs = costs.smooth_inrange_cost(XR + a, XR, SPEC, k1)
    rhs = costs.smooth_inrange_cost(XR - a, XR, SPEC, k1)
    assert lhs == pytest.approx(rhs, abs=1e-14)


@settings(max_examples=200, deadline=None)
@given(st.floats(-6, 6), st.floats(0.01, 5))
def test_smooth_inrange_strictly_between(x, k1):
    # strict in exact arithmetic; in floating point tanh rounds to +-1 once
    # its argument exceeds about 19
    assume(k1 * abs(abs(x) - 1.5) < 15.0 and k1 * (abs(x) + 1.5) < 15.0)
    v = costs.smooth_inrange_cost(x, 0.0, RangeSpec(ReferenceSignal.constant(0.0), 1.5), k1)
    assert -2.0 < v < 0.0


def test_smooth_inrange_converges_to_indicator():
    eps = 0.05
    grid = np.linspace(-6, 6, 4001) + XR
    keep = np.abs(np.abs(grid - XR) - SPEC.delta) > eps
    exact = costs.indicator_cost(grid[keep], XR, SPEC)
    prev = None
    for k1 in (1.0, 10.0, 40.0 / eps):
        err = np.max(np.abs(costs.smooth_inrange_cost(grid[keep], XR, SPEC, k1) - exact))
        if prev is not None:
            assert err <= prev
        prev = err
    assert prev < 0.01


def test_general_alpha_beta_affine():
    spec = RangeSpec(REF, 1.5, alpha=-5.0, beta=1.0)
    x = np.linspace(-3.0, 6.0, 31)
    base = costs.smooth_inrange_cost(x, XR, SPEC, 2.0)
    # affine map of the (-2, 0) cost onto (-5, 1)
    np.testing.assert_allclose(costs.smooth_inrange_cost(x, XR, spec, 2.0), 1.0 + 3.0 * base, atol=1e-12)


def test_multidimensional_ball():
    spec = RangeSpec(ReferenceSignal.constant([0.0, 0.0]), 2.0)
    inside = costs.smooth_inrange_cost(np.array([0.5, 0.5]), np.array([0.0, 0.0]), spec, 20.0)
    outside = costs.smooth_inrange_cost(np.array([3.0, 0.0]), np.array([0.0, 0.0]), spec, 20.0)
    assert inside == pytest.approx(-2.0, abs=1e-6)
    assert outside == pytest.approx(0.0, abs=1e-6)
    x = np.array([1.2, -0.9])
    g = costs.smooth_inrange_cost_grad(x, np.zeros(2), spec, 3.0)
    for j in range(2):
        def f(v, j=j):
            y = x.copy()
            y[j] = v
            return costs.smooth_inrange_cost(y, np.zeros(2), spec, 3.0)

        assert np.ravel(g)[j] == pytest.approx(fd(f, x[j]), rel=1e-6)


def test_zero_alpha_warns():
    with pytest.warns(UserWarning, match="non-uniqueness"):
        RangeSpec(REF, 1.5, alpha=0.0, beta=1.0)


def test_range_spec_validation():
    with pytest.raises(OcpValidationError):
        RangeSpec(REF, 0.0)
    with pytest.raises(OcpValidationError):
        RangeSpec(REF, 1.0, alpha=1.0, beta=1.0)


# -- smooth max ----------------------------------------------------------------


def test_smooth_max_examples():
    assert costs.smooth_max(np.array([5.0]), 3.7) == 5.0
    assert costs.smooth_max(np.array([0.0, 0.0]), 1.0) == pytest.approx(oracles.KS_ZEROS, abs=1e-14)
    assert costs.smooth_max(np.array([2.0, 0.0]), 1.0) == pytest.approx(oracles.KS_TWO_ZERO, abs=1e-14)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-100, 100), min_size=1, max_size=8),
    st.sampled_from([0.5, 1.0, 10.0]),
)
def test_ks_bounds_property(values, rho):
    s = np.asarray(values)
    v = costs.smooth_max(s, rho)
    assert s.max() - 1e-12 <= v <= s.max() + np.log(s.size) / rho + 1e-12


def test_ks_bounds_1000_sets():
    rng = np.random.default_rng(11)
    for rho in (0.5, 1.0, 10.0):
        for _ in range(1000):
            n = int(rng.integers(1, 9))
            s = rng.uniform(-50, 50, n)
            v = costs.smooth_max(s, rho)
            assert s.max() - 1e-12 <= v <= s.max() + np.log(n) / rho + 1e-12


def test_smooth_max_overflow_safe():
    s = np.array([1e6, -1e6, 5e5])
    v = costs.smooth_max(s, 1e3)
    assert np.isfinite(v) and v == pytest.approx(1e6)
    w = costs.smooth_max_weights(s, 1e3)
    assert np.all(np.isfinite(w)) and w.sum() == pytest.approx(1.0)


def test_smooth_max_weights_are_gradient():
    s = np.array([0.3, -1.2, 0.8])
    w = costs.smooth_max_weights(s, 2.0)
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1e-6
        num = (costs.smooth_max(s + e, 2.0) - costs.smooth_max(s - e, 2.0)) / 2e-6
        assert w[i] == pytest.approx(num, rel=1e-6)


# -- regularisers --------------------------------------------------------------


def test_quadratic_regularizer():
    p = SmoothingParams(k2=1e5, regularizer="quadratic")
    assert costs.regularizer(XR + 1.0, XR, SPEC, p) == pytest.approx(1e-5, rel=1e-12)


def test_hinged_regularizer():
    p = SmoothingParams(k2=1.0, rho=1.0, regularizer="hinged")
    assert costs.regularizer(XR, XR, SPEC, p) == pytest.approx(oracles.HINGED_AT_REFERENCE, abs=1e-12)


def test_indicator_gated_regularizer():
    p = SmoothingParams(k1=100.0, k2=1.0, regularizer="indicator_gated")
    assert abs(costs.regularizer(XR, XR, SPEC, p)) < 1e-8 * SPEC.delta ** 2 / p.k2


@pytest.mark.parametrize("kind", ["quadratic", "hinged", "indicator_gated"])
@pytest.mark.parametrize("e", [0.0, 1.0, 1.5, 2.0, 5.0])
def test_regularizer_gradients(kind, e):
    p = SmoothingParams(k1=2.0, k2=10.0, rho=1.0, regularizer=kind)
    g = costs.regularizer_grad(XR + e, XR, SPEC, p)
    num = fd(lambda x: costs.regularizer(x, XR, SPEC, p), XR + e)
    assert abs(g - num) <= 1e-6 * max(abs(num), 1e-8) + 1e-12


def test_regularizer_none_rejected_directly():
    with pytest.raises(ValueError):
        costs.regularizer(XR, XR, SPEC, SmoothingParams(regularizer="none"))


# -- nair stage cost -----------------------------------------------------------


def test_nair_none_reduces_to_smooth():
    x = np.linspace(-4, 7, 23)
    p = SmoothingParams(k1=3.0, regularizer="none")
    np.testing.assert_array_equal(costs.nair_stage_cost(x, XR, SPEC, p), costs.smooth_inrange_cost(x, XR, SPEC, 3.0))


def test_nair_quadratic_value():
    p = SmoothingParams(k1=1.0, k2=1e5, regularizer="quadratic")
    assert costs.nair_stage_cost(XR + 2.0, XR, SPEC, p) == pytest.approx(oracles.NAIR_E2_QUADRATIC, abs=1e-12)


def test_nair_converges_as_k2_grows():
    x = np.linspace(-4, 7, 23)
    smooth = costs.smooth_inrange_cost(x, XR, SPEC, 2.0)
    errs = [np.max(np.abs(costs.nair_stage_cost(x, XR, SPEC, SmoothingParams(k1=2.0, k2=k2)) - smooth)) for k2 in (1e1, 1e3, 1e5, 1e7)]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-5


def test_smoothing_params_validation():
    with pytest.raises(OcpValidationError):
        SmoothingParams(k1=0.0)
    with pytest.raises(OcpValidationError):
        SmoothingParams(gamma=1.0)
    with pytest.raises(OcpValidationError):
        SmoothingParams(regularizer="cubic")


# -- multi-agent aggregation ---------------------------------------------------


def test_multi_agent_plain_examples():
    p = SmoothingParams(rho=1.0)
    both = costs.multi_agent_nair_cost(np.array([-2.0, -2.0]), p, "plain")
    one = costs.multi_agent_nair_cost(np.array([-2.0, 0.0]), p, "plain")
    assert both == pytest.approx(oracles.MULTI_PLAIN_BOTH_IN, abs=oracles.MULTI_TOL)
    assert one == pytest.approx(oracles.MULTI_PLAIN_ONE_IN, abs=oracles.MULTI_TOL)
    assert both == pytest.approx(oracles.MULTI_PLAIN_BOTH_IN_EXACT, abs=1e-14)
    assert one == pytest.approx(oracles.MULTI_PLAIN_ONE_IN_EXACT, abs=1e-14)


def test_multi_agent_clipped_examples():
    p = SmoothingParams(rho=1.0, gamma=6.0)
    for l in ([-2.0, -2.0], [-2.0, 0.0]):
        v = costs.multi_agent_nair_cost(np.array(l), p, "clipped", alpha=-2.0)
        assert v == pytest.approx(oracles.MULTI_CLIPPED, abs=oracles.MULTI_TOL)


def test_multi_agent_mode_checked():
    with pytest.raises(ValueError):
        costs.multi_agent_nair_cost(np.array([-2.0, 0.0]), SmoothingParams(), "median")
    with pytest.raises(ValueError):
        costs.multi_agent_nair_cost(np.array([-2.0, 0.0]), SmoothingParams(), "clipped")


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-2.0, 0.0), min_size=2, max_size=4), st.sampled_from([1.0, 2.0, 10.0]))
def test_plain_cost_below_exact_min(l, rho):
    l = np.asarray(l)
    assert costs.multi_agent_nair_cost(l, SmoothingParams(rho=rho), "plain") <= l.min() + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-2.0, 0.0), min_size=1, max_size=3), st.sampled_from([1.0, 2.0, 5.0]))
def test_clipped_cost_with_an_agent_in_range(others, rho):
    # one agent in range: the scaled smooth max sits far below alpha, so the
    # outer smooth max returns alpha to within its own bias
    l = np.array([-2.0] + others)
    exact = max(l.min(), -2.0)
    v = costs.multi_agent_nair_cost(l, SmoothingParams(rho=rho, gamma=6.0), "clipped", alpha=-2.0)
    assert abs(v - exact) < 0.01


def test_clipped_cost_all_out_of_range_is_biased():
    # with nobody in range the inner bias gamma log(N) / rho dominates at rho = 1
    v = costs.multi_agent_nair_cost(np.array([0.0, 0.0]), SmoothingParams(rho=1.0, gamma=6.0), "clipped", alpha=-2.0)
    assert -2.0 < v < -1.5


@pytest.mark.parametrize("mode", ["plain", "clipped"])
def test_multi_agent_gradient(mode):
    alpha = -2.0 if mode == "clipped" else None
    # clipped: near the switch between the scaled minimum and alpha
    p = SmoothingParams(rho=5.0 if alpha else 1.5, gamma=6.0)
    l = np.array([-0.3, -0.1, -0.32]) if alpha else np.array([-1.3, -0.4, -1.9])
    g = costs.multi_agent_nair_cost_grad(l, p, mode, alpha=alpha)
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1e-6
        num = (costs.multi_agent_nair_cost(l + e, p, mode, alpha=alpha) - costs.multi_agent_nair_cost(l - e, p, mode, alpha=alpha)) / 2e-6
        assert abs(np.ravel(g)[i] - num) < 1e-6 * np.max(np.abs(g))
