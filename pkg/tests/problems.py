"""Small hand-built problems shared by the tests."""

import numpy as np

from inrange.ocp import (
    BoundaryConstraint,
    BoundaryEval,
    BoundaryFunction,
    Bounds,
    FixedHorizon,
    OcpSpec,
    PointEval,
    PointFunction,
)
from inrange.transcription import NlpBlock, NlpProblem


def _dyn(X, U, p, t):
    P = X.shape[0]
    f = np.stack([X[:, 1], U[:, 0]], axis=1)
    dx = np.zeros((P, 2, 2))
    dx[:, 0, 1] = 1.0
    du = np.zeros((P, 2, 1))
    du[:, 1, 0] = 1.0
    return PointEval(f, dx, du)


def _effort(X, U, p, t):
    return PointEval(U ** 2, None, (2.0 * U)[:, :, None])


def _rest_to_rest(t0, tf, x0, xf, u0, uf, p):
    v = np.array([x0[0], x0[1], xf[0] - 1.0, xf[1]])
    dx0 = np.zeros((4, 2))
    dx0[0, 0] = dx0[1, 1] = 1.0
    dxf = np.zeros((4, 2))
    dxf[2, 0] = dxf[3, 1] = 1.0
    return BoundaryEval(v, d_x0=dx0, d_xf=dxf)


def double_integrator_ocp() -> OcpSpec:
    """x'' = u, rest to rest from 0 to 1 in unit time, min int u^2."""
    return OcpSpec(
        2,
        1,
        PointFunction("double_integrator", 2, _dyn),
        FixedHorizon(0.0, 1.0),
        lagrange_terms=(PointFunction("effort", 1, _effort),),
        boundary_constraints=(BoundaryConstraint(BoundaryFunction("rest_to_rest", 4, _rest_to_rest), "eq"),),
    )


def scaled_double_integrator_ocp(gain=0.1, tf=1.0) -> OcpSpec:
    """x'' = gain * u with constant-input friendly structure (no costs)."""

    def dyn(X, U, p, t):
        P = X.shape[0]
        f = np.stack([X[:, 1], gain * U[:, 0]], axis=1)
        dx = np.zeros((P, 2, 2))
        dx[:, 0, 1] = 1.0
        du = np.zeros((P, 2, 1))
        du[:, 1, 0] = gain
        return PointEval(f, dx, du)

    return OcpSpec(2, 1, PointFunction("scaled_double_integrator", 2, dyn), FixedHorizon(0.0, tf))


def zero_dynamics_ocp(nx=2) -> OcpSpec:
    def dyn(X, U, p, t):
        P = X.shape[0]
        return PointEval(np.zeros((P, nx)))

    return OcpSpec(nx, 1, PointFunction("still", nx, dyn), FixedHorizon(0.0, 2.0))


def dense_nlp(n, objective, eq=None, ineq=None, lower=None, upper=None) -> NlpProblem:
    """NLP from plain callables ``f(z) -> (value, grad)``, ``c(z) -> (value, jac)``."""
    blocks = [NlpBlock("objective", "objective", 1, objective)]
    if eq is not None:
        blocks.append(NlpBlock("eq", "eq", eq[0], eq[1]))
    if ineq is not None:
        blocks.append(NlpBlock("ineq", "ineq", ineq[0], ineq[1]))
    lo = np.full(n, -np.inf) if lower is None else np.asarray(lower, float)
    hi = np.full(n, np.inf) if upper is None else np.asarray(upper, float)
    return NlpProblem(n=n, blocks=blocks, lower=lo, upper=hi)


__all__ = ["Bounds", "dense_nlp", "double_integrator_ocp", "scaled_double_integrator_ocp", "zero_dynamics_ocp"]
