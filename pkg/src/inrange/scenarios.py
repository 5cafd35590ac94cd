"""Concrete tracking scenarios and exact (unsmoothed) evaluation metrics.

Three problem families:

* ``single_1d``: one double-integrator tracker with a battery state.
* ``multi_1d``: two such trackers operating from a base station, optionally
  with slow wireless charging near the base.
* ``fixedwing_3d``: a fixed-wing UAV whose downward camera footprint grows
  linearly with altitude, asked to keep a ground target in view.

Per-agent state ordering is ``(x, v, E)`` with input ``u`` for the 1D
families and ``(x, y, z, heading, V, E)`` with inputs ``(climb, turn,
accel)`` for the fixed-wing family.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import costs
from .costs import RangeSpec, SmoothingParams
from .ocp import (
    BoundaryConstraint,
    BoundaryEval,
    BoundaryFunction,
    Bounds,
    FixedHorizon,
    FreeHorizon,
    OcpSpec,
    OcpValidationError,
    PointEval,
    PointFunction,
    ReferenceSignal,
    Trajectory,
)
from .transcription import Layout, Mesh

__all__ = [
    "FORMULATIONS",
    "BatteryModel",
    "ChargingModel",
    "FixedWingModel",
    "Metrics",
    "Scenario",
    "ScenarioConfig",
    "agent_stage_costs",
    "build_1d_multi",
    "build_1d_single",
    "build_3d_fixedwing",
    "compute_metrics",
    "make_scenario",
]

FORMULATIONS = ("setpoint", "air_hard", "air_soft", "nair")


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class ChargingModel:
    rate_scale: float = 0.05
    shape_offset: float = 0.7
    base_position: float = -18.0


@dataclass(frozen=True)
class BatteryModel:
    """State-of-charge drain (%/s) of the simplified multirotor.

    Without charging ``E' = -hover - (input_coeff u)^2 - velocity_coeff v^2``;
    with charging the constant hover term becomes
    ``rate_scale (shape_offset + tanh(x - base))``.
    """

    hover_drain: float = 0.085
    input_coeff: float = 0.283
    velocity_coeff: float = 0.566
    accel_gain: float = 0.1
    charging: Optional[ChargingModel] = None

    def __post_init__(self):
        for name in ("hover_drain", "input_coeff", "velocity_coeff", "accel_gain"):
            if getattr(self, name) < 0:
                raise OcpValidationError(f"battery.{name}", "must be >= 0")

    def constant_term(self, x):
        """Stationary part of the drain rate and its derivative in ``x``."""
        x = np.asarray(x, dtype=float)
        if self.charging is None:
            return np.full_like(x, -self.hover_drain), np.zeros_like(x)
        c = self.charging
        th = np.tanh(x - c.base_position)
        return -c.rate_scale * (c.shape_offset + th), -c.rate_scale * (1.0 - th * th)

    def soc_rate(self, x, v, u):
        """``(E', dE'/dx, dE'/dv, dE'/du)``."""
        base, dbase = self.constant_term(x)
        a = self.input_coeff
        rate = base - (a * u) ** 2 - self.velocity_coeff * v ** 2
        return rate, dbase, -2.0 * self.velocity_coeff * v, -2.0 * a * a * u


@dataclass(frozen=True)
class FixedWingModel:
    """Point-mass fixed-wing kinematics with a parasitic plus induced power curve.

    ``P(V) = c1 V^3 + c2 / V``; minimum power (maximum endurance) at
    ``V* = (c2 / (3 c1))^(1/4)``. The camera sees a disc of radius
    ``footprint_at_ceiling * z / ceiling`` around the nadir point.
    """

    c1: float = 0.002
    c2: float = 300.0
    speed_min: float = 8.0
    speed_max: float = 25.0
    climb_max: float = 2.0
    turn_max: float = 0.5
    accel_max: float = 1.0
    ceiling: float = 130.0
    footprint_at_ceiling: float = 40.0
    energy_scale: float = 100.0

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise OcpValidationError("fixedwing.c1", "power coefficients must be > 0")
        if not (0 < self.speed_min < self.speed_max and math.isfinite(self.speed_max)):
            raise OcpValidationError("fixedwing.speed_min", "need 0 < speed_min < speed_max < inf")
        for name in ("climb_max", "turn_max", "accel_max", "ceiling", "footprint_at_ceiling", "energy_scale"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise OcpValidationError(f"fixedwing.{name}", "must be finite and > 0")

    def power(self, V):
        V = np.asarray(V, dtype=float)
        return self.c1 * V ** 3 + self.c2 / V

    def power_grad(self, V):
        V = np.asarray(V, dtype=float)
        return 3.0 * self.c1 * V ** 2 - self.c2 / V ** 2

    @property
    def optimal_speed(self) -> float:
        return (self.c2 / (3.0 * self.c1)) ** 0.25

    def footprint(self, z):
        return self.footprint_at_ceiling * np.asarray(z, dtype=float) / self.ceiling


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class Metrics:
    """Exact, smoothing-independent outcome of a trajectory."""

    horizon: float
    in_range_time: tuple  # per agent, seconds
    any_in_range_time: float
    all_in_range_time: float
    energy_used: tuple  # per agent, % SOC
    final_soc: tuple
    objective: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "in_range_time": list(self.in_range_time),
            "any_in_range_time": self.any_in_range_time,
            "all_in_range_time": self.all_in_range_time,
            "energy_used": list(self.energy_used),
            "final_soc": list(self.final_soc),
            "objective": self.objective,
            "diagnostics": self.diagnostics,
        }


def _trapezoid_weights(times):
    times = np.asarray(times, dtype=float)
    w = np.zeros_like(times)
    dt = np.diff(times)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


# relative slack on the range radius when scoring trajectories: a point on
# the boundary of a path constraint satisfied to the solver tolerance counts
# as in range
BOUNDARY_RTOL = 1e-6


def in_range_mask(traj: Trajectory, spec: RangeSpec, agent_count: int, state_dim: int, tracked=(0,), radius=None, rtol=BOUNDARY_RTOL):
    """Boolean ``(P, N)`` array from the exact indicator.

    ``radius`` optionally maps the per-agent state block ``(P, state_dim)`` to
    a per-point range radius replacing ``spec.delta``. Distances are compared
    against ``radius * (1 + rtol)``.
    """
    xr = spec.reference(traj.times)
    masks = []
    for i in range(agent_count):
        block = traj.agent_states(i, state_dim)
        pos = block[:, list(tracked)]
        if spec.dim == 1:
            pos, ref = pos[:, 0], xr[:, 0]
        else:
            ref = xr
        e = pos - ref
        d2 = e * e if spec.dim == 1 else np.sum(e * e, axis=-1)
        r = spec.delta if radius is None else radius(block)
        masks.append(d2 <= (r * (1.0 + rtol)) ** 2)
    return np.column_stack(masks)


def compute_metrics(
    traj: Trajectory,
    spec: RangeSpec,
    agent_count: int = 1,
    state_dim: int = 3,
    tracked=(0,),
    energy_index: Optional[int] = 2,
    radius: Optional[Callable] = None,
    objective: Optional[float] = None,
    diagnostics: Optional[dict] = None,
    rtol: float = BOUNDARY_RTOL,
) -> Metrics:
    """In-range times from the exact indicator with trapezoidal grid weights."""
    mask = in_range_mask(traj, spec, agent_count, state_dim, tracked, radius, rtol)
    w = _trapezoid_weights(traj.times)
    per_agent = tuple(float(w @ mask[:, i]) for i in range(agent_count))
    any_time = float(w @ np.any(mask, axis=1))
    all_time = float(w @ np.all(mask, axis=1))
    if energy_index is None:
        used = tuple(0.0 for _ in range(agent_count))
        final = used
    else:
        E = np.column_stack([traj.agent_states(i, state_dim)[:, energy_index] for i in range(agent_count)])
        used = tuple(float(v) for v in E[0] - E[-1])
        final = tuple(float(v) for v in E[-1])
    return Metrics(
        horizon=float(traj.times[-1] - traj.times[0]),
        in_range_time=per_agent,
        any_in_range_time=any_time,
        all_in_range_time=all_time,
        energy_used=used,
        final_soc=final,
        objective=objective,
        diagnostics=dict(diagnostics or {}),
    )


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ScenarioConfig:
    """Every knob of the scenario builders, with desk-scale defaults."""

    t0: float = 0.0
    tf: float = 300.0
    free_tf: Optional[tuple] = None
    K: int = 100
    delta: float = 1.5
    alpha: float = -2.0
    beta: float = 0.0
    reference: ReferenceSignal = field(default_factory=lambda: ReferenceSignal.sinusoid(6.0, 100.0))
    agents: int = 1
    battery: BatteryModel = field(default_factory=BatteryModel)
    initial_position: float = 0.0
    initial_soc: float = 80.0
    final_soc_min: float = 10.0
    base_position: float = -18.0
    return_to_base: bool = True
    speed_max: float = 5.0
    input_max: float = 10.0
    Q: float = 1.0
    R: float = 0.1
    energy_weight: float = 0.01
    soft_weight: float = 1.0
    soft_rho: float = 10.0
    aggregation: str = "clipped"
    fixedwing: FixedWingModel = field(default_factory=FixedWingModel)
    fw_initial: tuple = (30.0, 0.0, 100.0, math.pi / 2, 12.0, 100.0)
    fw_input_weight: float = 1e-3

    def __post_init__(self):
        if self.aggregation not in ("plain", "clipped"):
            raise OcpValidationError("aggregation", "must be 'plain' or 'clipped'")
        if self.agents < 1:
            raise OcpValidationError("agents", "must be >= 1")
        if not self.tf > self.t0:
            raise OcpValidationError("horizon", "need tf > t0")

    def range_spec(self) -> RangeSpec:
        return RangeSpec(self.reference, self.delta, self.alpha, self.beta)

    def horizon(self):
        if self.free_tf is None:
            return FixedHorizon(self.t0, self.tf)
        lo, hi = self.free_tf
        return FreeHorizon(self.t0, lo, hi)


# ---------------------------------------------------------------------------
# point-function factories


def _battery_dynamics(model: BatteryModel, N: int) -> PointFunction:
    nx = 3 * N

    def fn(X, U, p, t):
        P = X.shape[0]
        f = np.zeros((P, nx))
        dx = np.zeros((P, nx, nx))
        du = np.zeros((P, nx, N))
        for i in range(N):
            ix, iv, ie = 3 * i, 3 * i + 1, 3 * i + 2
            x, v, u = X[:, ix], X[:, iv], U[:, i]
            rate, d_x, d_v, d_u = model.soc_rate(x, v, u)
            f[:, ix] = v
            f[:, iv] = model.accel_gain * u
            f[:, ie] = rate
            dx[:, ix, iv] = 1.0
            du[:, iv, i] = model.accel_gain
            dx[:, ie, ix] = d_x
            dx[:, ie, iv] = d_v
            du[:, ie, i] = d_u
        return PointEval(f, dx, du)

    return PointFunction("battery_double_integrator", nx, fn)


def _fixedwing_dynamics(model: FixedWingModel) -> PointFunction:
    def fn(X, U, p, t):
        P = X.shape[0]
        psi, V = X[:, 3], X[:, 4]
        c, s = np.cos(psi), np.sin(psi)
        f = np.column_stack([V * c, V * s, U[:, 0], U[:, 1], U[:, 2], -model.power(V) / model.energy_scale])
        dx = np.zeros((P, 6, 6))
        dx[:, 0, 3] = -V * s
        dx[:, 0, 4] = c
        dx[:, 1, 3] = V * c
        dx[:, 1, 4] = s
        dx[:, 5, 4] = -model.power_grad(V) / model.energy_scale
        du = np.zeros((P, 6, 3))
        du[:, 2, 0] = du[:, 3, 1] = du[:, 4, 2] = 1.0
        return PointEval(f, dx, du)

    return PointFunction("fixedwing_kinematics", 6, fn)


def _positions(X, N, stride, tracked):
    return np.stack([X[:, i * stride + tracked] for i in range(N)], axis=1)


def _tracking_term(name, N, stride, tracked, ref: ReferenceSignal, core):
    """Stage cost of the tracked scalar position of every agent.

    ``core(pos (P, N), xr (P,)) -> (value (P,), d value / d pos (P, N))``.
    """

    def fn(X, U, p, t):
        P = X.shape[0]
        xr = ref(t)[:, 0]
        dxr = ref.derivative(t)[:, 0]
        pos = _positions(X, N, stride, tracked)
        val, g = core(pos, xr)
        dx = np.zeros((P, 1, X.shape[1]))
        for i in range(N):
            dx[:, 0, i * stride + tracked] = g[:, i]
        dt = -(g.sum(axis=1) * dxr)
        return PointEval(val[:, None], dx, None, None, dt[:, None])

    return PointFunction(name, 1, fn)


def _input_quadratic(name, weight, nu) -> PointFunction:
    def fn(X, U, p, t):
        return PointEval((weight * np.sum(U * U, axis=1))[:, None], None, (2.0 * weight * U)[:, None, :])

    del nu
    return PointFunction(name, 1, fn)


def _boundary(name, width, fn) -> BoundaryFunction:
    return BoundaryFunction(name, width, fn)


def _state_pin(name, nx, indices, values, at="start") -> BoundaryFunction:
    """``x[indices] - values`` at the start or end of the horizon."""
    indices = list(indices)
    values = np.asarray(values, dtype=float)
    c = len(indices)
    D = np.zeros((c, nx))
    D[np.arange(c), indices] = 1.0

    def fn(t0, tf, x0, xf, u0, uf, p):
        x = x0 if at == "start" else xf
        val = x[indices] - values
        return BoundaryEval(val, d_x0=D if at == "start" else None, d_xf=D if at == "end" else None)

    return BoundaryFunction(name, c, fn)


def _final_soc_floor(nx, energy_indices, floor) -> BoundaryFunction:
    c = len(energy_indices)
    D = np.zeros((c, nx))
    D[np.arange(c), energy_indices] = -1.0

    def fn(t0, tf, x0, xf, u0, uf, p):
        return BoundaryEval(floor - xf[energy_indices], d_xf=D)

    return BoundaryFunction("final_soc_floor", c, fn)


def _final_energy_reward(nx, energy_indices, weight) -> BoundaryFunction:
    D = np.zeros((1, nx))
    D[0, energy_indices] = -weight

    def fn(t0, tf, x0, xf, u0, uf, p):
        return BoundaryEval(np.array([-weight * np.sum(xf[energy_indices])]), d_xf=D)

    return BoundaryFunction("final_energy", 1, fn)


# ---------------------------------------------------------------------------
# stage costs for the 1D families


def _setpoint_core(Q, R_unused=None):
    def core(pos, xr):
        e = pos - xr[:, None]
        return Q * np.sum(e * e, axis=1), 2.0 * Q * e

    return core


def _soft_core(spec: RangeSpec, rho, weight):
    """Smoothed exact penalty on the two linear range constraints ``+-e - delta <= 0``.

    Both sides are normalised by ``delta`` so that ``rho`` is dimensionless.
    """
    d = spec.delta

    def core(pos, xr):
        e = (pos - xr[:, None]) / d
        val = np.zeros_like(e)
        g = np.zeros_like(e)
        for sign in (1.0, -1.0):
            r = sign * e - 1.0
            pair = np.stack([r, np.zeros_like(r)], axis=-1)
            val += costs.smooth_max(pair, rho)
            g += sign * costs.smooth_max_weights(pair, rho)[..., 0] / d
        return weight * np.sum(val, axis=1), weight * g

    return core


def _nair_core(spec: RangeSpec, params: SmoothingParams, aggregation):
    def core(pos, xr):
        l = costs.nair_stage_cost(pos, xr[:, None], spec, params)
        dl = costs.nair_stage_cost_grad(pos, xr[:, None], spec, params)
        if pos.shape[1] == 1:
            return l[:, 0], dl
        alpha = spec.alpha if aggregation == "clipped" else None
        val = costs.multi_agent_nair_cost(l, params, aggregation, alpha=alpha)
        w = costs.multi_agent_nair_cost_grad(l, params, aggregation, alpha=alpha)
        return val, w * dl

    return core


def agent_stage_costs(spec: RangeSpec, params: SmoothingParams, N: int, stride: int = 3, tracked: int = 0) -> PointFunction:
    """Per-agent smoothed in-range stage costs ``l_i`` (one output per agent)."""
    ref = spec.reference

    def fn(X, U, p, t):
        P = X.shape[0]
        xr = ref(t)[:, 0]
        dxr = ref.derivative(t)[:, 0]
        pos = _positions(X, N, stride, tracked)
        l = costs.nair_stage_cost(pos, xr[:, None], spec, params)
        g = costs.nair_stage_cost_grad(pos, xr[:, None], spec, params)
        dx = np.zeros((P, N, X.shape[1]))
        for i in range(N):
            dx[:, i, i * stride + tracked] = g[:, i]
        return PointEval(l, dx, None, None, -g * dxr[:, None])

    return PointFunction("agent_inrange", N, fn)


def _air_path(spec: RangeSpec, N, stride, tracked, params: SmoothingParams) -> PointFunction:
    ref = spec.reference
    scale = 1.0 / spec.delta ** 2

    def fn(X, U, p, t):
        P = X.shape[0]
        xr = ref(t)[:, 0]
        dxr = ref.derivative(t)[:, 0]
        pos = _positions(X, N, stride, tracked)
        if N == 1:
            val = costs.air_constraint_residual(pos[:, 0], xr, spec)
            g = costs.air_constraint_residual_grad(pos[:, 0], xr, spec)[:, None]
        else:
            val = costs.multi_air_constraint_residual(pos, xr, spec, params.rho)
            g = costs.multi_air_constraint_residual_grad(pos, xr, spec, params.rho)
        dx = np.zeros((P, 1, X.shape[1]))
        for i in range(N):
            dx[:, 0, i * stride + tracked] = g[:, i]
        dt = -(g.sum(axis=1) * dxr)
        return PointEval(scale * val[:, None], scale * dx, None, None, scale * dt[:, None])

    return PointFunction("in_range", 1, fn)


def _tracking_terms(formulation, cfg: ScenarioConfig, params: SmoothingParams, N):
    spec = cfg.range_spec()
    ref = spec.reference
    lagrange, path = [], []
    if formulation == "setpoint":
        lagrange.append(_tracking_term("setpoint_error", N, 3, 0, ref, _setpoint_core(cfg.Q)))
        lagrange.append(_input_quadratic("setpoint_input", cfg.R, N))
    elif formulation == "air_soft":
        lagrange.append(_tracking_term("soft_range", N, 3, 0, ref, _soft_core(spec, cfg.soft_rho, cfg.soft_weight)))
    elif formulation == "nair":
        lagrange.append(_tracking_term("inrange", N, 3, 0, ref, _nair_core(spec, params, cfg.aggregation)))
    elif formulation == "air_hard":
        path.append(_air_path(spec, N, 3, 0, params))
    else:
        raise OcpValidationError("formulation", f"unknown formulation {formulation!r}")
    return lagrange, path


def _battery_bounds(cfg: ScenarioConfig, N):
    lo = np.tile([-np.inf, -cfg.speed_max, 0.0], N)
    hi = np.tile([np.inf, cfg.speed_max, 100.0], N)
    return Bounds.of(lo, hi), Bounds.of(np.full(N, -cfg.input_max), np.full(N, cfg.input_max))


def build_1d_single(formulation: str, cfg: ScenarioConfig, params: Optional[SmoothingParams] = None) -> OcpSpec:
    """One tracker with battery under the chosen tracking formulation.

    The energy budget enters as the terminal constraint
    ``E(tf) >= final_soc_min`` so that formulations compare at equal budget.
    """
    params = params or SmoothingParams()
    if formulation not in FORMULATIONS:
        raise OcpValidationError("formulation", f"unknown formulation {formulation!r}")
    lagrange, path = _tracking_terms(formulation, cfg, params, 1)
    sb, ib = _battery_bounds(cfg, 1)
    if cfg.final_soc_min > cfg.initial_soc:
        raise OcpValidationError("final_soc_min", "exceeds the initial state of charge")
    boundary = [
        BoundaryConstraint(_state_pin("initial_state", 3, [0, 1, 2], [cfg.initial_position, 0.0, cfg.initial_soc]), "eq"),
        BoundaryConstraint(_final_soc_floor(3, [2], cfg.final_soc_min), "ineq"),
    ]
    mayer = (_final_energy_reward(3, [2], cfg.energy_weight),) if cfg.energy_weight > 0 else ()
    return OcpSpec(
        state_dim=3,
        input_dim=1,
        dynamics=_battery_dynamics(cfg.battery, 1),
        horizon=cfg.horizon(),
        lagrange_terms=tuple(lagrange),
        mayer_terms=mayer,
        path_constraints=tuple(path),
        boundary_constraints=tuple(boundary),
        state_bounds=sb,
        input_bounds=ib,
        state_names=("x", "v", "E"),
        input_names=("u",),
    )


def build_1d_multi(charging: bool, formulation: str, cfg: ScenarioConfig, params: Optional[SmoothingParams] = None) -> OcpSpec:
    """Several trackers launched from and returning to the base station.

    Each agent starts at the base at rest with ``initial_soc`` and must end at
    the base with at least ``final_soc_min``; with ``charging`` the battery
    model gains the base-station charging term.
    """
    params = params or SmoothingParams()
    N = cfg.agents
    if formulation not in FORMULATIONS:
        raise OcpValidationError("formulation", f"unknown formulation {formulation!r}")
    battery = cfg.battery
    if charging:
        battery = replace(battery, charging=battery.charging or ChargingModel(base_position=cfg.base_position))
    else:
        battery = replace(battery, charging=None)
    nx = 3 * N
    lagrange, path = _tracking_terms(formulation, cfg, params, N)
    sb, ib = _battery_bounds(cfg, N)
    start = np.tile([cfg.base_position, 0.0, cfg.initial_soc], N)
    e_idx = [3 * i + 2 for i in range(N)]
    boundary = [
        BoundaryConstraint(_state_pin("initial_state", nx, range(nx), start), "eq"),
        BoundaryConstraint(_final_soc_floor(nx, e_idx, cfg.final_soc_min), "ineq"),
    ]
    if cfg.return_to_base:
        pos_idx = [3 * i for i in range(N)]
        boundary.append(
            BoundaryConstraint(_state_pin("return_to_base", nx, pos_idx, [cfg.base_position] * N, at="end"), "eq")
        )
    mayer = (_final_energy_reward(nx, e_idx, cfg.energy_weight),) if cfg.energy_weight > 0 else ()
    return OcpSpec(
        state_dim=3,
        input_dim=1,
        agent_count=N,
        dynamics=_battery_dynamics(battery, N),
        horizon=cfg.horizon(),
        lagrange_terms=tuple(lagrange),
        mayer_terms=mayer,
        path_constraints=tuple(path),
        boundary_constraints=tuple(boundary),
        state_bounds=sb,
        input_bounds=ib,
        state_names=("x", "v", "E"),
        input_names=("u",),
    )


# ---------------------------------------------------------------------------
# fixed wing


def _footprint_constraint(model: FixedWingModel, ref: ReferenceSignal) -> PointFunction:
    """``(d_h^2 - r(z)^2) / r_ceiling^2 <= 0`` with ``d_h`` the horizontal distance."""
    slope = model.footprint_at_ceiling / model.ceiling
    scale = 1.0 / model.footprint_at_ceiling ** 2

    def fn(X, U, p, t):
        P = X.shape[0]
        xr = ref(t)
        dxr = ref.derivative(t)
        e = X[:, :2] - xr
        val = np.sum(e * e, axis=1) - (slope * X[:, 2]) ** 2
        dx = np.zeros((P, 1, 6))
        dx[:, 0, :2] = 2.0 * e
        dx[:, 0, 2] = -2.0 * slope * slope * X[:, 2]
        dt = -2.0 * np.sum(e * dxr, axis=1)
        return PointEval(scale * val[:, None], scale * dx, None, None, scale * dt[:, None])

    return PointFunction("camera_footprint", 1, fn)


def _horizontal_setpoint(Q, ref: ReferenceSignal, length_scale: float) -> PointFunction:
    """``Q |e_h / length_scale|^2``: horizontal error measured in footprint radii."""
    w = Q / length_scale ** 2

    def fn(X, U, p, t):
        P = X.shape[0]
        e = X[:, :2] - ref(t)
        dx = np.zeros((P, 1, 6))
        dx[:, 0, :2] = 2.0 * w * e
        dt = -2.0 * w * np.sum(e * ref.derivative(t), axis=1)
        return PointEval((w * np.sum(e * e, axis=1))[:, None], dx, None, None, dt[:, None])

    return PointFunction("setpoint_error", 1, fn)


def build_3d_fixedwing(cfg: ScenarioConfig, formulation: str = "air_hard", params: Optional[SmoothingParams] = None) -> OcpSpec:
    """Fixed-wing camera UAV keeping a ground target inside its footprint.

    ``air_hard`` minimises energy subject to the footprint path constraint;
    ``setpoint`` regulates the horizontal error to zero instead. Both share
    the initial state and bounds.
    """
    model = cfg.fixedwing
    ref = cfg.reference
    if ref.dim != 2:
        raise OcpValidationError("reference.dim", "fixed-wing target must be a 2-D ground track")
    ts = np.linspace(cfg.t0, cfg.tf, 201)
    target_speed = np.max(np.linalg.norm(ref.derivative(ts), axis=1))
    if target_speed > model.speed_max:
        warnings.warn(
            f"target speed {target_speed:.2f} m/s exceeds the maximum airspeed; "
            "always-in-range is likely infeasible",
            stacklevel=2,
        )
    if formulation not in ("air_hard", "setpoint"):
        raise OcpValidationError("formulation", f"fixedwing_3d supports air_hard and setpoint, not {formulation!r}")
    lagrange = [_input_quadratic("input_effort", cfg.fw_input_weight, 3)]
    path = []
    if formulation == "air_hard":
        path.append(_footprint_constraint(model, ref))
    else:
        lagrange.insert(0, _horizontal_setpoint(cfg.Q, ref, model.footprint_at_ceiling))
        lagrange[-1] = _input_quadratic("setpoint_input", cfg.R, 3)
    mayer = (_final_energy_reward(6, [5], max(cfg.energy_weight, 0.0)),) if cfg.energy_weight > 0 else ()
    sb = Bounds.of(
        [-np.inf, -np.inf, 0.0, -np.inf, model.speed_min, 0.0],
        [np.inf, np.inf, model.ceiling, np.inf, model.speed_max, 100.0],
    )
    ib = Bounds.of(
        [-model.climb_max, -model.turn_max, -model.accel_max],
        [model.climb_max, model.turn_max, model.accel_max],
    )
    boundary = [BoundaryConstraint(_state_pin("initial_state", 6, range(6), list(cfg.fw_initial)), "eq")]
    return OcpSpec(
        state_dim=6,
        input_dim=3,
        dynamics=_fixedwing_dynamics(model),
        horizon=cfg.horizon(),
        lagrange_terms=tuple(lagrange),
        mayer_terms=mayer,
        path_constraints=tuple(path),
        boundary_constraints=tuple(boundary),
        state_bounds=sb,
        input_bounds=ib,
        state_names=("x", "y", "z", "heading", "V", "E"),
        input_names=("climb", "turn", "accel"),
    )


# ---------------------------------------------------------------------------
# scenario objects


def _integrate_soc(times, X, U, battery: BatteryModel, N, E0):
    """Forward-Euler state of charge along a guessed motion, for initial guesses."""
    X = X.copy()
    dt = np.diff(times)
    for i in range(N):
        ix, iv, ie = 3 * i, 3 * i + 1, 3 * i + 2
        rate, *_ = battery.soc_rate(X[:, ix], X[:, iv], U[:, i])
        X[0, ie] = E0
        X[1:, ie] = E0 + np.cumsum(0.5 * (rate[:-1] + rate[1:]) * dt)
    X[:, 2::3] = np.clip(X[:, 2::3], 0.0, 100.0)
    return X


@dataclass
class Scenario:
    """A scenario family instance: builds OCPs per smoothing stage and scores trajectories."""

    name: str
    formulation: str
    config: ScenarioConfig
    charging: bool = False

    @property
    def agent_count(self) -> int:
        return 1 if self.name in ("single_1d", "fixedwing_3d") else self.config.agents

    @property
    def state_dim(self) -> int:
        return 6 if self.name == "fixedwing_3d" else 3

    @property
    def mesh(self) -> Mesh:
        return Mesh(self.config.K)

    def build(self, params: Optional[SmoothingParams] = None) -> OcpSpec:
        if self.name == "single_1d":
            return build_1d_single(self.formulation, self.config, params)
        if self.name == "multi_1d":
            return build_1d_multi(self.charging, self.formulation, self.config, params)
        if self.name == "fixedwing_3d":
            return build_3d_fixedwing(self.config, self.formulation, params)
        raise OcpValidationError("scenario", f"unknown scenario {self.name!r}")

    def agent_costs(self, params: SmoothingParams) -> PointFunction:
        return agent_stage_costs(self.config.range_spec(), params, self.agent_count)

    def battery(self) -> BatteryModel:
        b = self.config.battery
        if self.name == "multi_1d" and self.charging:
            return replace(b, charging=b.charging or ChargingModel(base_position=self.config.base_position))
        return replace(b, charging=None) if self.name == "multi_1d" else b

    def initial_guess(self, layout: Layout) -> np.ndarray:
        cfg = self.config
        tf = cfg.tf if cfg.free_tf is None else 0.5 * sum(cfg.free_tf)
        t = layout.times(tf)
        P = t.size
        if self.name == "fixedwing_3d":
            return layout.join(*self._fixedwing_guess(t), tf=tf)
        ref = cfg.reference
        xr, vr = ref(t)[:, 0], ref.derivative(t)[:, 0]
        N = self.agent_count
        X = np.zeros((P, 3 * N))
        if self.name == "single_1d":
            # reference following, eased in from the initial position
            blend = np.clip((t - t[0]) / max(0.05 * (tf - t[0]), 1e-9), 0.0, 1.0)
            X[:, 0] = cfg.initial_position + blend * (xr - cfg.initial_position)
            X[:, 1] = np.gradient(X[:, 0], t)
        else:
            # agents take turns: agent i follows the reference in the
            # i-th slice of the horizon and waits at the base otherwise
            edges = np.linspace(t[0], tf, N + 1)
            ramp = 0.05 * (tf - t[0])
            for i in range(N):
                up = np.clip((t - edges[i]) / ramp, 0, 1)
                down = np.clip((edges[i + 1] - t) / ramp, 0, 1)
                w = np.minimum(up, down)
                X[:, 3 * i] = cfg.base_position + w * (xr - cfg.base_position)
                X[:, 3 * i + 1] = np.gradient(X[:, 3 * i], t)
        vmax = cfg.speed_max
        X[:, 1::3] = np.clip(X[:, 1::3], -vmax, vmax)
        U = np.zeros((P, N))
        for i in range(N):
            U[:, i] = np.clip(np.gradient(X[:, 3 * i + 1], t) / self.battery().accel_gain, -cfg.input_max, cfg.input_max)
        X = _integrate_soc(t, X, U, self.battery(), N, cfg.initial_soc)
        del vr
        return layout.join(X, U, tf=tf)

    def _fixedwing_guess(self, t):
        cfg = self.config
        model = cfg.fixedwing
        x0, y0, z0, psi0, V0, E0 = cfg.fw_initial
        c = cfg.reference(t)
        R = math.hypot(x0 - c[0, 0], y0 - c[0, 1]) or 0.5 * model.footprint(z0)
        omega = min(V0 / R, 0.9 * model.turn_max)
        V = omega * R
        ang0 = math.atan2(y0 - c[0, 1], x0 - c[0, 0])
        ang = ang0 + omega * (t - t[0])
        P = t.size
        X = np.zeros((P, 6))
        X[:, 0] = c[:, 0] + R * np.cos(ang)
        X[:, 1] = c[:, 1] + R * np.sin(ang)
        X[:, 2] = z0
        X[:, 3] = ang + math.pi / 2
        X[:, 4] = np.clip(V, model.speed_min, model.speed_max)
        X[:, 5] = E0 - np.concatenate([[0], np.cumsum(np.diff(t))]) * model.power(X[0, 4]) / model.energy_scale
        U = np.zeros((P, 3))
        U[:, 1] = omega
        return X, U

    def range_radius(self):
        if self.name != "fixedwing_3d":
            return None
        model = self.config.fixedwing
        return lambda block: model.footprint(block[:, 2])

    def metrics_range_spec(self) -> RangeSpec:
        cfg = self.config
        if self.name == "fixedwing_3d":
            return RangeSpec(cfg.reference, cfg.fixedwing.footprint_at_ceiling, cfg.alpha, cfg.beta)
        return cfg.range_spec()

    @property
    def input_dim(self) -> int:
        return 3 if self.name == "fixedwing_3d" else 1

    @property
    def state_names(self):
        return ("x", "y", "z", "psi", "V", "E") if self.name == "fixedwing_3d" else ("x", "v", "E")

    @property
    def input_names(self):
        return ("u_climb", "u_turn", "u_accel") if self.name == "fixedwing_3d" else ("u",)

    def in_range_mask(self, traj: Trajectory) -> np.ndarray:
        """Exact per-agent indicator on the grid, ``(P, N)`` booleans."""
        is_fw = self.name == "fixedwing_3d"
        return in_range_mask(
            traj, self.metrics_range_spec(), self.agent_count, self.state_dim, (0, 1) if is_fw else (0,), self.range_radius()
        )

    def metrics(self, traj: Trajectory, objective=None, diagnostics=None) -> Metrics:
        is_fw = self.name == "fixedwing_3d"
        return compute_metrics(
            traj,
            self.metrics_range_spec(),
            agent_count=self.agent_count,
            state_dim=self.state_dim,
            tracked=(0, 1) if is_fw else (0,),
            energy_index=5 if is_fw else 2,
            radius=self.range_radius(),
            objective=objective,
            diagnostics=diagnostics,
        )


def make_scenario(name: str, formulation: str, cfg: ScenarioConfig, charging: bool = False) -> Scenario:
    if name not in ("single_1d", "multi_1d", "fixedwing_3d"):
        raise OcpValidationError("scenario", f"unknown scenario {name!r}")
    if formulation not in FORMULATIONS:
        raise OcpValidationError("formulation", f"unknown formulation {formulation!r}")
    return Scenario(name, formulation, cfg, charging)
