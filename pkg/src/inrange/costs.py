"""In-range stage costs, their smooth surrogates and aggregation operators.

Scalar tracking (``dim == 1``) takes plain arrays of positions; higher
dimensional tracking takes arrays whose trailing axis has length ``dim``
and measures Euclidean distance to the reference. Every smooth operation
has a ``*_grad`` companion returning the derivative with respect to ``x``
(the derivative with respect to the reference is its negative).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .ocp import OcpValidationError, ReferenceSignal

__all__ = [
    "REGULARIZERS",
    "RangeSpec",
    "SmoothingParams",
    "air_constraint_residual",
    "air_constraint_residual_grad",
    "indicator_cost",
    "multi_agent_nair_cost",
    "multi_agent_nair_cost_grad",
    "multi_air_constraint_residual",
    "multi_air_constraint_residual_grad",
    "nair_stage_cost",
    "nair_stage_cost_grad",
    "regularizer",
    "regularizer_grad",
    "smooth_indicator",
    "smooth_indicator_grad",
    "smooth_inrange_cost",
    "smooth_inrange_cost_grad",
    "smooth_max",
    "smooth_max_weights",
]

REGULARIZERS = ("none", "quadratic", "hinged", "indicator_gated")


@dataclass(frozen=True)
class RangeSpec:
    """Tracking range: reference, radius ``delta`` and in/out stage values."""

    reference: ReferenceSignal
    delta: float
    alpha: float = -2.0
    beta: float = 0.0

    def __post_init__(self):
        if not self.delta > 0:
            raise OcpValidationError("range.delta", "must be > 0")
        if self.alpha == self.beta:
            raise OcpValidationError("range.alpha", "alpha == beta makes the stage cost constant")
        if self.alpha == 0 and self.beta >= 0:
            warnings.warn(
                "alpha=0 with beta>=0 gives every always-in-range solution zero cost "
                "regardless of horizon, worsening non-uniqueness of solutions",
                stacklevel=3,
            )

    @property
    def dim(self) -> int:
        return self.reference.dim


@dataclass(frozen=True)
class SmoothingParams:
    """One stage of smoothing: tanh sharpness, regulariser weight, KS sharpness."""

    k1: float = 40.0
    k2: float = 1e6
    rho: float = 1.0
    gamma: float = 6.0
    regularizer: str = "hinged"

    def __post_init__(self):
        for name in ("k1", "k2", "rho"):
            if not getattr(self, name) > 0:
                raise OcpValidationError(f"smoothing.{name}", "must be > 0")
        if not self.gamma > 1:
            raise OcpValidationError("smoothing.gamma", "must be > 1")
        if self.regularizer not in REGULARIZERS:
            raise OcpValidationError("smoothing.regularizer", f"must be one of {REGULARIZERS}")


def _deviation(x, xr, dim):
    e = np.asarray(x, dtype=float) - np.asarray(xr, dtype=float)
    if dim == 1:
        return e
    if e.shape[-1] != dim:
        raise ValueError(f"trailing axis has length {e.shape[-1]}, expected {dim}")
    return e


def _sq_dist(e, dim):
    return e * e if dim == 1 else np.sum(e * e, axis=-1)


def _expand(scalar_field, e, dim):
    # Broadcast a per-point factor over the trailing coordinate axis.
    return scalar_field if dim == 1 else scalar_field[..., None]


def _sech2(z):
    return 1.0 - np.tanh(z) ** 2


# ---------------------------------------------------------------------------
# exact forms


def indicator_cost(x, xr, spec: RangeSpec):
    """Exact indicator stage cost: ``alpha`` inside the closed range, ``beta`` outside."""
    e = _deviation(x, xr, spec.dim)
    inside = _sq_dist(e, spec.dim) <= spec.delta ** 2
    if spec.dim == 1:
        inside = np.abs(e) <= spec.delta
    out = np.where(inside, spec.alpha, spec.beta)
    return float(out) if np.ndim(out) == 0 else out


def air_constraint_residual(x, xr, spec: RangeSpec):
    """Always-in-range residual ``d^2 - delta^2``; non-positive iff in range."""
    e = _deviation(x, xr, spec.dim)
    return _sq_dist(e, spec.dim) - spec.delta ** 2


def air_constraint_residual_grad(x, xr, spec: RangeSpec):
    return 2.0 * _deviation(x, xr, spec.dim)


# ---------------------------------------------------------------------------
# smooth max


def smooth_max(values, rho: float, axis: int = -1):
    """Kreisselmeier-Steinhauser smooth maximum along ``axis``.

    Shifted by the true maximum before exponentiating, so the result is
    finite whenever the inputs are. Satisfies
    ``max(s) <= smooth_max(s) <= max(s) + log(N) / rho``.
    """
    s = np.asarray(values, dtype=float)
    if s.size == 0 or s.shape[axis] == 0:
        raise ValueError("smooth_max of an empty set")
    if not rho > 0:
        raise ValueError("rho must be > 0")
    m = np.max(s, axis=axis, keepdims=True)
    total = np.sum(np.exp(rho * (s - m)), axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(total) / rho, axis=axis)
    return float(out) if out.ndim == 0 else out


def smooth_max_weights(values, rho: float, axis: int = -1):
    """Gradient of :func:`smooth_max` with respect to each value (the softmax)."""
    s = np.asarray(values, dtype=float)
    m = np.max(s, axis=axis, keepdims=True)
    w = np.exp(rho * (s - m))
    return w / np.sum(w, axis=axis, keepdims=True)


def _ks_pair(a, b, rho):
    # smooth_max({a, b}) and its weight on ``a``, elementwise.
    m = np.maximum(a, b)
    ea = np.exp(rho * (a - m))
    eb = np.exp(rho * (b - m))
    return m + np.log(ea + eb) / rho, ea / (ea + eb)


# ---------------------------------------------------------------------------
# smoothed in-range cost


def smooth_inrange_cost(x, xr, spec: RangeSpec, k1: float):
    """Smooth in-range stage cost taking values strictly between alpha and beta.

    Scalar tracking uses a pair of tanh steps at ``+-delta``; for
    ``dim > 1`` a single tanh step in ``d^2 - delta^2``.
    """
    e = _deviation(x, xr, spec.dim)
    a, b, d = spec.alpha, spec.beta, spec.delta
    if spec.dim == 1:
        return b + 0.5 * (b - a) * (np.tanh(k1 * (e - d)) + np.tanh(k1 * (-e - d)))
    r = _sq_dist(e, spec.dim) - d * d
    return b + 0.5 * (a - b) * (1.0 - np.tanh(k1 * r))


def smooth_inrange_cost_grad(x, xr, spec: RangeSpec, k1: float):
    e = _deviation(x, xr, spec.dim)
    a, b, d = spec.alpha, spec.beta, spec.delta
    if spec.dim == 1:
        return 0.5 * (b - a) * k1 * (_sech2(k1 * (e - d)) - _sech2(k1 * (-e - d)))
    r = _sq_dist(e, spec.dim) - d * d
    return _expand(-0.5 * (a - b) * k1 * _sech2(k1 * r), e, spec.dim) * 2.0 * e


def smooth_indicator(x, xr, spec: RangeSpec, k1: float):
    """Smooth out-of-range indicator in ``(0, 1)``: near 0 inside, near 1 outside."""
    e = _deviation(x, xr, spec.dim)
    d = spec.delta
    if spec.dim == 1:
        return 1.0 + 0.5 * (np.tanh(k1 * (e - d)) + np.tanh(k1 * (-e - d)))
    return 0.5 * (1.0 + np.tanh(k1 * (_sq_dist(e, spec.dim) - d * d)))


def smooth_indicator_grad(x, xr, spec: RangeSpec, k1: float):
    e = _deviation(x, xr, spec.dim)
    d = spec.delta
    if spec.dim == 1:
        return 0.5 * k1 * (_sech2(k1 * (e - d)) - _sech2(k1 * (-e - d)))
    r = _sq_dist(e, spec.dim) - d * d
    return _expand(0.5 * k1 * _sech2(k1 * r), e, spec.dim) * 2.0 * e


# ---------------------------------------------------------------------------
# regularisers


def regularizer(x, xr, spec: RangeSpec, params: SmoothingParams):
    """Regularisation term pulling out-of-range points towards the range."""
    e = _deviation(x, xr, spec.dim)
    d2 = _sq_dist(e, spec.dim)
    kind = params.regularizer
    if kind == "quadratic":
        return d2 / params.k2
    if kind == "hinged":
        val, _ = _ks_pair(d2 - spec.delta ** 2, 0.0, params.rho)
        return val / params.k2
    if kind == "indicator_gated":
        gate = smooth_indicator(x, xr, spec, params.k1)
        return gate * (d2 - spec.delta ** 2) / params.k2
    if kind == "none":
        raise ValueError("regularizer() called with regularizer='none'")
    raise ValueError(f"unknown regularizer {kind!r}")


def regularizer_grad(x, xr, spec: RangeSpec, params: SmoothingParams):
    e = _deviation(x, xr, spec.dim)
    d2 = _sq_dist(e, spec.dim)
    kind = params.regularizer
    if kind == "quadratic":
        return 2.0 * e / params.k2
    if kind == "hinged":
        _, w = _ks_pair(d2 - spec.delta ** 2, 0.0, params.rho)
        return _expand(w, e, spec.dim) * 2.0 * e / params.k2
    if kind == "indicator_gated":
        gate = smooth_indicator(x, xr, spec, params.k1)
        dgate = smooth_indicator_grad(x, xr, spec, params.k1)
        r = d2 - spec.delta ** 2
        return (dgate * _expand(r, e, spec.dim) + _expand(gate, e, spec.dim) * 2.0 * e) / params.k2
    raise ValueError(f"regularizer_grad() undefined for regularizer={kind!r}")


def nair_stage_cost(x, xr, spec: RangeSpec, params: SmoothingParams):
    """Smoothed not-always-in-range stage cost: smooth indicator plus regulariser."""
    val = smooth_inrange_cost(x, xr, spec, params.k1)
    if params.regularizer != "none":
        val = val + regularizer(x, xr, spec, params)
    return val


def nair_stage_cost_grad(x, xr, spec: RangeSpec, params: SmoothingParams):
    g = smooth_inrange_cost_grad(x, xr, spec, params.k1)
    if params.regularizer != "none":
        g = g + regularizer_grad(x, xr, spec, params)
    return g


# ---------------------------------------------------------------------------
# multi-agent aggregation


def _check_mode(mode, alpha):
    if mode not in ("plain", "clipped"):
        raise ValueError(f"mode must be 'plain' or 'clipped', got {mode!r}")
    if mode == "clipped" and (alpha is None or not alpha < 0):
        raise ValueError("clipped aggregation needs alpha < 0 (with beta = 0)")


def multi_agent_nair_cost(per_agent_costs, params: SmoothingParams, mode: str = "plain", alpha=None):
    """Smooth minimum over agents of the per-agent stage costs (last axis).

    ``plain`` negates a smooth max of the negated costs, which always lies
    below the true minimum. ``clipped`` scales that by ``gamma`` and takes a
    smooth max against ``alpha``, removing the bias when some agent is in range.
    """
    _check_mode(mode, alpha)
    l = np.asarray(per_agent_costs, dtype=float)
    s = smooth_max(-l, params.rho)
    if mode == "plain":
        return -s
    out, _ = _ks_pair(-params.gamma * np.asarray(s), alpha, params.rho)
    return float(out) if np.ndim(out) == 0 else out


def multi_agent_nair_cost_grad(per_agent_costs, params: SmoothingParams, mode: str = "plain", alpha=None):
    """Derivative of :func:`multi_agent_nair_cost` with respect to each agent cost."""
    _check_mode(mode, alpha)
    l = np.asarray(per_agent_costs, dtype=float)
    w = smooth_max_weights(-l, params.rho)
    if mode == "plain":
        return w
    s = smooth_max(-l, params.rho)
    _, v = _ks_pair(-params.gamma * np.asarray(s), alpha, params.rho)
    return params.gamma * np.asarray(v)[..., None] * w


def multi_air_constraint_residual(xs, xr, spec: RangeSpec, rho: float):
    """Smooth surrogate of ``min_i d_i^2 - delta^2`` over agents.

    ``xs`` stacks agents on axis ``-1`` for scalar tracking and on axis
    ``-2`` otherwise.
    """
    r = _agent_residuals(xs, xr, spec)
    return -smooth_max(-r, rho)


def multi_air_constraint_residual_grad(xs, xr, spec: RangeSpec, rho: float):
    """Derivative with respect to every agent position, shaped like ``xs``."""
    r = _agent_residuals(xs, xr, spec)
    w = smooth_max_weights(-r, rho)
    xs = np.asarray(xs, dtype=float)
    if spec.dim == 1:
        e = xs - np.asarray(xr, dtype=float)[..., None]
        return w * 2.0 * e
    e = xs - np.asarray(xr, dtype=float)[..., None, :]
    return w[..., None] * 2.0 * e


def _agent_residuals(xs, xr, spec):
    xs = np.asarray(xs, dtype=float)
    if spec.dim == 1:
        e = xs - np.asarray(xr, dtype=float)[..., None]
        return e * e - spec.delta ** 2
    e = xs - np.asarray(xr, dtype=float)[..., None, :]
    return np.sum(e * e, axis=-1) - spec.delta ** 2
