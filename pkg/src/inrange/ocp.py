"""Continuous-time optimal control problem description.

Problems are stated on a stacked state vector: with ``agent_count`` agents of
``state_dim`` states each, every callback sees arrays with ``agent_count *
state_dim`` state columns (agent-major). Callbacks are vectorised over time
grid points and return their own partial derivatives, so the transcription can
assemble exact gradients by the chain rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

__all__ = [
    "Bounds",
    "BoundaryConstraint",
    "BoundaryEval",
    "BoundaryFunction",
    "FixedHorizon",
    "FreeHorizon",
    "OcpSpec",
    "OcpValidationError",
    "PointEval",
    "PointFunction",
    "ReferenceSignal",
    "Trajectory",
    "evaluate_reference",
    "setpoint_stage_cost",
]


class OcpValidationError(ValueError):
    """Raised when a problem description is malformed.

    ``field`` names the offending field of the description.
    """

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


# ---------------------------------------------------------------------------
# reference signals


@dataclass(frozen=True)
class ReferenceSignal:
    """Parametric reference trajectory ``x_r(t)``.

    Use the ``constant``, ``piecewise_linear`` and ``sinusoid`` constructors.
    Values are vectors of length ``dim``; outside the knot span a
    piecewise-linear signal holds its end values.
    """

    kind: str
    dim: int
    value: tuple = ()
    knot_times: tuple = ()
    knot_values: tuple = ()
    amplitude: tuple = ()
    period: float = 1.0
    offset: tuple = ()
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "piecewise_linear", "sinusoid"):
            raise OcpValidationError("reference.kind", f"unknown kind {self.kind!r}")
        if self.dim < 1:
            raise OcpValidationError("reference.dim", "must be a positive integer")
        if self.kind == "piecewise_linear":
            times = np.asarray(self.knot_times, dtype=float)
            if times.size < 1:
                raise OcpValidationError("reference.knots", "at least one knot required")
            if np.any(np.diff(times) <= 0):
                raise OcpValidationError("reference.knots", "knot times must be strictly increasing")
            if np.asarray(self.knot_values).shape != (times.size, self.dim):
                raise OcpValidationError("reference.knots", "knot values must match dim")
        if self.kind == "sinusoid" and not self.period > 0:
            raise OcpValidationError("reference.period", "must be positive")

    @classmethod
    def constant(cls, value) -> "ReferenceSignal":
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(kind="constant", dim=v.size, value=tuple(v))

    @classmethod
    def piecewise_linear(cls, knots: Sequence) -> "ReferenceSignal":
        """``knots`` is a sequence of ``(time, value)`` pairs."""
        times = tuple(float(t) for t, _ in knots)
        values = tuple(tuple(np.atleast_1d(np.asarray(v, dtype=float))) for _, v in knots)
        dim = len(values[0]) if values else 1
        return cls(kind="piecewise_linear", dim=dim, knot_times=times, knot_values=values)

    @classmethod
    def sinusoid(cls, amplitude, period: float, offset=0.0, phase: float = 0.0) -> "ReferenceSignal":
        amp = np.atleast_1d(np.asarray(amplitude, dtype=float))
        off = np.broadcast_to(np.asarray(offset, dtype=float), amp.shape)
        return cls(
            kind="sinusoid",
            dim=amp.size,
            amplitude=tuple(amp),
            period=float(period),
            offset=tuple(off),
            phase=float(phase),
        )

    def __call__(self, t) -> np.ndarray:
        return evaluate_reference(self, t)

    def derivative(self, t) -> np.ndarray:
        """Time derivative, same shape convention as evaluation."""
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.zeros(t.shape + (self.dim,))
        if self.kind == "sinusoid":
            amp = np.asarray(self.amplitude)
            w = 2.0 * np.pi / self.period
            return amp * w * np.cos(w * t[..., None] + self.phase)
        times = np.asarray(self.knot_times)
        values = np.asarray(self.knot_values)
        if times.size == 1:
            return np.zeros(t.shape + (self.dim,))
        slopes = np.diff(values, axis=0) / np.diff(times)[:, None]
        seg = np.clip(np.searchsorted(times, t, side="right") - 1, 0, times.size - 2)
        out = slopes[seg]
        outside = (t < times[0]) | (t > times[-1])
        return np.where(outside[..., None], 0.0, out)


def evaluate_reference(ref: ReferenceSignal, t) -> np.ndarray:
    """Evaluate a reference signal.

    Returns shape ``(dim,)`` for scalar ``t`` and ``t.shape + (dim,)`` for
    arrays of times.
    """
    t = np.asarray(t, dtype=float)
    if ref.kind == "constant":
        return np.broadcast_to(np.asarray(ref.value), t.shape + (ref.dim,)).copy()
    if ref.kind == "sinusoid":
        amp = np.asarray(ref.amplitude)
        off = np.asarray(ref.offset)
        w = 2.0 * np.pi / ref.period
        return off + amp * np.sin(w * t[..., None] + ref.phase)
    times = np.asarray(ref.knot_times)
    values = np.asarray(ref.knot_values)
    cols = [np.interp(t, times, values[:, j]) for j in range(ref.dim)]
    return np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------
# callbacks


@dataclass
class PointEval:
    """Value and partials of a pointwise function on ``P`` grid points.

    Shapes: ``value (P, c)``, ``dx (P, c, nx)``, ``du (P, c, nu)``,
    ``dp (P, c, np)``, ``dt (P, c)``. ``None`` partials mean identically zero.
    """

    value: np.ndarray
    dx: Optional[np.ndarray] = None
    du: Optional[np.ndarray] = None
    dp: Optional[np.ndarray] = None
    dt: Optional[np.ndarray] = None


@dataclass(frozen=True)
class PointFunction:
    """A named vector function ``(X, U, p, t) -> PointEval`` of width ``out_dim``."""

    name: str
    out_dim: int
    fn: Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], PointEval]

    def __call__(self, X, U, p, t) -> PointEval:
        return self.fn(X, U, p, t)


@dataclass
class BoundaryEval:
    """Value ``(c,)`` and partials of a boundary function; ``None`` means zero."""

    value: np.ndarray
    d_t0: Optional[np.ndarray] = None
    d_tf: Optional[np.ndarray] = None
    d_x0: Optional[np.ndarray] = None
    d_xf: Optional[np.ndarray] = None
    d_u0: Optional[np.ndarray] = None
    d_uf: Optional[np.ndarray] = None
    d_p: Optional[np.ndarray] = None


@dataclass(frozen=True)
class BoundaryFunction:
    """A named function of ``(t0, tf, x0, xf, u0, uf, p)`` of width ``out_dim``."""

    name: str
    out_dim: int
    fn: Callable[..., BoundaryEval]

    def __call__(self, t0, tf, x0, xf, u0, uf, p) -> BoundaryEval:
        return self.fn(t0, tf, x0, xf, u0, uf, p)


@dataclass(frozen=True)
class BoundaryConstraint:
    function: BoundaryFunction
    kind: str = "ineq"  # "ineq" (<= 0) or "eq" (== 0)

    def __post_init__(self):
        if self.kind not in ("eq", "ineq"):
            raise OcpValidationError("boundary_constraints.kind", f"unknown kind {self.kind!r}")


# ---------------------------------------------------------------------------
# problem description


@dataclass(frozen=True)
class Bounds:
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def unbounded(cls, n: int) -> "Bounds":
        return cls(np.full(n, -np.inf), np.full(n, np.inf))

    @classmethod
    def of(cls, lower, upper) -> "Bounds":
        return cls(np.asarray(lower, dtype=float).copy(), np.asarray(upper, dtype=float).copy())


@dataclass(frozen=True)
class FixedHorizon:
    t0: float
    tf: float

    @property
    def free(self) -> bool:
        return False


@dataclass(frozen=True)
class FreeHorizon:
    t0: float
    tf_lower: float
    tf_upper: float

    @property
    def free(self) -> bool:
        return True


Horizon = Union[FixedHorizon, FreeHorizon]


@dataclass(frozen=True)
class OcpSpec:
    """Declarative optimal control problem.

    minimise   sum(mayer) - duration_weight * tf + int_{t0}^{tf} sum(lagrange) dt
    subject to x' = dynamics(x, u, p, t), path_constraints <= 0,
               boundary constraints, bounds.

    Construction validates every field and probes each callback once to
    check its declared output width.
    """

    state_dim: int
    input_dim: int
    dynamics: PointFunction
    horizon: Horizon
    agent_count: int = 1
    param_dim: int = 0
    lagrange_terms: tuple = ()
    mayer_terms: tuple = ()
    duration_weight: float = 0.0
    path_constraints: tuple = ()
    boundary_constraints: tuple = ()
    state_bounds: Optional[Bounds] = None
    input_bounds: Optional[Bounds] = None
    param_bounds: Optional[Bounds] = None
    state_names: tuple = ()
    input_names: tuple = ()

    def __post_init__(self):
        for name in ("state_dim", "input_dim", "agent_count"):
            v = getattr(self, name)
            if not (isinstance(v, (int, np.integer)) and v >= 1):
                raise OcpValidationError(name, "must be a positive integer")
        if not (isinstance(self.param_dim, (int, np.integer)) and self.param_dim >= 0):
            raise OcpValidationError("param_dim", "must be a non-negative integer")
        if not self.duration_weight >= 0:
            raise OcpValidationError("duration_weight", "must be >= 0")
        nx, nu = self.nx, self.nu
        defaults = {
            "state_bounds": nx,
            "input_bounds": nu,
            "param_bounds": self.param_dim,
        }
        for name, n in defaults.items():
            b = getattr(self, name)
            if b is None:
                object.__setattr__(self, name, Bounds.unbounded(n))
                continue
            if b.lower.shape != (n,) or b.upper.shape != (n,):
                raise OcpValidationError(name, f"expected {n} lower/upper entries")
            if np.any(b.lower > b.upper):
                raise OcpValidationError(name, "lower bound exceeds upper bound")
        h = self.horizon
        if isinstance(h, FixedHorizon):
            if not (math.isfinite(h.t0) and math.isfinite(h.tf) and h.tf > h.t0):
                raise OcpValidationError("horizon", "fixed horizon requires finite t0 < tf")
        elif isinstance(h, FreeHorizon):
            if not (h.tf_lower < h.tf_upper):
                raise OcpValidationError("horizon", "free final time requires tf_lower < tf_upper")
            if not (math.isfinite(h.tf_upper) and h.tf_lower > h.t0):
                raise OcpValidationError("horizon", "free final time requires t0 < tf_lower, finite tf_upper")
        else:
            raise OcpValidationError("horizon", "must be FixedHorizon or FreeHorizon")
        for name in ("state_names", "input_names"):
            names = getattr(self, name)
            width = self.state_dim if name == "state_names" else self.input_dim
            if names and len(names) != width:
                raise OcpValidationError(name, f"expected {width} names")
        for bc in self.boundary_constraints:
            if not isinstance(bc, BoundaryConstraint):
                raise OcpValidationError("boundary_constraints", "entries must be BoundaryConstraint")
        self._probe()

    @property
    def nx(self) -> int:
        return self.state_dim * self.agent_count

    @property
    def nu(self) -> int:
        return self.input_dim * self.agent_count

    def _probe_point(self):
        def mid(b: Bounds):
            lo = np.where(np.isfinite(b.lower), b.lower, np.minimum(0.0, b.upper))
            hi = np.where(np.isfinite(b.upper), b.upper, np.maximum(0.0, lo))
            return 0.5 * (lo + hi)

        X = np.tile(mid(self.state_bounds), (2, 1))
        U = np.tile(mid(self.input_bounds), (2, 1))
        p = mid(self.param_bounds)
        h = self.horizon
        tf = h.tf if isinstance(h, FixedHorizon) else h.tf_upper
        t = np.array([h.t0, tf], dtype=float)
        return X, U, p, t

    def _probe(self):
        X, U, p, t = self._probe_point()
        nx, nu, npar = self.nx, self.nu, self.param_dim

        def check_point(field_name, fnc, width=None):
            ev = fnc(X, U, p, t)
            c = fnc.out_dim if width is None else width
            if fnc.out_dim != c:
                raise OcpValidationError(field_name, f"{fnc.name}: expected width {c}, declared {fnc.out_dim}")
            shapes = {"value": (2, c), "dx": (2, c, nx), "du": (2, c, nu), "dp": (2, c, npar), "dt": (2, c)}
            for attr, shape in shapes.items():
                arr = getattr(ev, attr)
                if arr is not None and np.shape(arr) != shape:
                    raise OcpValidationError(
                        field_name, f"{fnc.name}: {attr} has shape {np.shape(arr)}, expected {shape}"
                    )

        check_point("dynamics", self.dynamics, nx)
        for fnc in self.lagrange_terms:
            check_point("lagrange_terms", fnc, 1)
        for fnc in self.path_constraints:
            check_point("path_constraints", fnc)

        def check_boundary(field_name, fnc, width=None):
            ev = fnc(t[0], t[1], X[0], X[1], U[0], U[1], p)
            c = fnc.out_dim if width is None else width
            if fnc.out_dim != c:
                raise OcpValidationError(field_name, f"{fnc.name}: expected width {c}")
            shapes = {
                "value": (c,), "d_t0": (c,), "d_tf": (c,), "d_x0": (c, nx), "d_xf": (c, nx),
                "d_u0": (c, nu), "d_uf": (c, nu), "d_p": (c, npar),
            }
            for attr, shape in shapes.items():
                arr = getattr(ev, attr)
                if arr is not None and np.shape(arr) != shape:
                    raise OcpValidationError(
                        field_name, f"{fnc.name}: {attr} has shape {np.shape(arr)}, expected {shape}"
                    )

        for fnc in self.mayer_terms:
            check_boundary("mayer_terms", fnc, 1)
        for bc in self.boundary_constraints:
            check_boundary("boundary_constraints", bc.function)


@dataclass(frozen=True)
class Trajectory:
    """Grid trajectory: ``states (P, nx)``, ``inputs (P, nu)``, static ``params``."""

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    params: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
            raise OcpValidationError("times", "must be a strictly increasing grid")
        if len(self.states) != times.size or len(self.inputs) != times.size:
            raise OcpValidationError("states", "array lengths must match the time grid")
        for name in ("times", "states", "inputs", "params"):
            if not np.all(np.isfinite(np.asarray(getattr(self, name), dtype=float))):
                raise OcpValidationError(name, "values must be finite")

    def agent_states(self, agent: int, state_dim: int) -> np.ndarray:
        return np.asarray(self.states)[:, agent * state_dim:(agent + 1) * state_dim]

    def agent_inputs(self, agent: int, input_dim: int) -> np.ndarray:
        return np.asarray(self.inputs)[:, agent * input_dim:(agent + 1) * input_dim]


def setpoint_stage_cost(e, u, Q, R) -> float:
    """Quadratic regulation cost ``e'Qe + u'Ru``."""
    e = np.atleast_1d(np.asarray(e, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if Q.shape != (e.size, e.size):
        raise ValueError(f"Q has shape {Q.shape}, expected {(e.size, e.size)}")
    if R.shape != (u.size, u.size):
        raise ValueError(f"R has shape {R.shape}, expected {(u.size, u.size)}")
    if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q).min() < -1e-12:
        raise ValueError("Q must be symmetric positive semidefinite")
    if not np.allclose(R, R.T) or np.linalg.eigvalsh(R).min() <= 0:
        raise ValueError("R must be symmetric positive definite")
    return float(e @ Q @ e + u @ R @ u)
