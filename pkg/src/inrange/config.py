"""Run configuration: JSON document, schema, defaults and conversion.

A run config is a single JSON object. Every key is optional except
``scenario``; omitted keys take the defaults in :data:`DEFAULTS`. The schema
(:data:`SCHEMA`) is checked with ``jsonschema`` and the cross-field rules
(equal schedule lengths, MPCC only for two agents, ...) by
:func:`validate_config`. Errors carry the dotted path of the offending field.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional

import jsonschema

from .continuation import ContinuationSchedule
from .ocp import OcpValidationError, ReferenceSignal
from .scenarios import FORMULATIONS, BatteryModel, ChargingModel, FixedWingModel, Scenario, ScenarioConfig, make_scenario
from .solver import SolverOptions

__all__ = [
    "ConfigError",
    "DEFAULTS",
    "SCHEMA",
    "RunConfig",
    "load_config",
    "parse_config",
    "validate_config",
    "shipped_configs",
    "shipped_config",
    "reference_from_dict",
]

SCENARIOS = ("single_1d", "multi_1d", "fixedwing_3d")
MODES = ("smooth_max", "mpcc")


class ConfigError(ValueError):
    """Invalid run configuration; ``path`` is the dotted location of the problem."""

    def __init__(self, path: str, message: str):
        self.path = path or "<root>"
        super().__init__(f"{self.path}: {message}")


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_vec = {"type": "array", "items": _num, "minItems": 1}
_scalar_or_vec = {"oneOf": [_num, _vec]}
_pos_array = {"type": "array", "items": _pos, "minItems": 1}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


SCHEMA: Dict[str, Any] = _obj(
    {
        "name": {"type": "string"},
        "scenario": {"enum": list(SCENARIOS)},
        "formulation": {"enum": list(FORMULATIONS)},
        "multi_agent_mode": {"enum": list(MODES)},
        "aggregation": {"enum": ["plain", "clipped"]},
        "agents": {"type": "integer", "minimum": 1},
        "charging": {"type": "boolean"},
        "range": _obj({"delta": _pos, "alpha": _num, "beta": _num}),
        "reference": {
            "oneOf": [
                _obj({"kind": {"const": "constant"}, "value": _scalar_or_vec}, ["kind", "value"]),
                _obj(
                    {
                        "kind": {"const": "piecewise_linear"},
                        "knots": {
                            "type": "array",
                            "minItems": 1,
                            "items": {"type": "array", "prefixItems": [_num, _scalar_or_vec], "minItems": 2, "maxItems": 2},
                        },
                    },
                    ["kind", "knots"],
                ),
                _obj(
                    {
                        "kind": {"const": "sinusoid"},
                        "amplitude": _scalar_or_vec,
                        "period": _pos,
                        "offset": _scalar_or_vec,
                        "phase": _num,
                    },
                    ["kind", "amplitude", "period"],
                ),
            ]
        },
        "schedule": _obj(
            {
                "k1": _pos_array,
                "k2": _pos_array,
                "rho": _pos_array,
                "gamma": {"type": "number", "exclusiveMinimum": 1},
                "regularizer": {"enum": ["none", "quadratic", "hinged", "indicator-gated"]},
                "epsilon": _pos_array,
            }
        ),
        "mesh": _obj({"K": {"type": "integer", "minimum": 2}}),
        "horizon": _obj({"t0": _num, "tf": _num, "tf_lower": _num, "tf_upper": _num}),
        "mission": _obj(
            {
                "initial_position": _num,
                "initial_soc": _num,
                "final_soc_min": _num,
                "base_position": _num,
                "return_to_base": {"type": "boolean"},
                "speed_max": _pos,
                "input_max": _pos,
            }
        ),
        "weights": _obj(
            {
                "Q": _nonneg,
                "R": _pos,
                "energy_weight": _nonneg,
                "soft_weight": _nonneg,
                "soft_rho": _pos,
                "fixedwing_input": _pos,
            }
        ),
        "battery": _obj(
            {
                "hover_drain": _nonneg,
                "input_coeff": _nonneg,
                "velocity_coeff": _nonneg,
                "accel_gain": _pos,
                "charging": _obj({"rate_scale": _nonneg, "shape_offset": _num, "base_position": _num}),
            }
        ),
        "fixedwing": _obj(
            {
                "c1": _pos,
                "c2": _pos,
                "speed_min": _pos,
                "speed_max": _pos,
                "climb_max": _pos,
                "turn_max": _pos,
                "accel_max": _pos,
                "ceiling": _pos,
                "footprint_at_ceiling": _pos,
                "energy_scale": _pos,
                "initial_state": {"type": "array", "items": _num, "minItems": 6, "maxItems": 6},
            }
        ),
        "solver": _obj(
            {
                "max_outer_iterations": {"type": "integer", "minimum": 1},
                "max_inner_iterations": {"type": "integer", "minimum": 1},
                "constraint_tolerance": _pos,
                "optimality_tolerance": _pos,
                "initial_penalty": _pos,
                "penalty_growth_factor": {"type": "number", "exclusiveMinimum": 1},
                "max_penalty": _pos,
                "hessian": {"enum": ["structured", "lbfgs"]},
                "hessian_differences": {"enum": ["forward", "central"]},
            }
        ),
        "output": _obj({"directory": {"type": "string"}}),
    },
    required=["scenario"],
)
SCHEMA["$schema"] = "https://json-schema.org/draft/2020-12/schema"

DEFAULTS: Dict[str, Any] = {
    "name": "",
    "formulation": "nair",
    "multi_agent_mode": "smooth_max",
    "aggregation": "clipped",
    "agents": None,  # 1 for single_1d / fixedwing_3d, 2 for multi_1d
    "charging": False,
    "range": {"delta": 1.5, "alpha": -2.0, "beta": 0.0},
    "reference": {"kind": "sinusoid", "amplitude": 6.0, "period": 100.0, "offset": 0.0, "phase": 0.0},
    "schedule": {
        "k1": [1.0, 10.0, 40.0],
        "k2": [1e5, 3e5, 1e6],
        "rho": [1.0],
        "gamma": 6.0,
        "regularizer": "hinged",
        "epsilon": [1e-2, 1e-3, 1e-4],
    },
    "mesh": {"K": 100},
    "horizon": {"t0": 0.0, "tf": 300.0},
    "mission": {
        "initial_position": 0.0,
        "initial_soc": 80.0,
        "final_soc_min": 10.0,
        "base_position": -18.0,
        "return_to_base": True,
        "speed_max": 5.0,
        "input_max": 10.0,
    },
    "weights": {"Q": 1.0, "R": 0.1, "energy_weight": 0.01, "soft_weight": 1.0, "soft_rho": 10.0, "fixedwing_input": 1e-3},
    "battery": {"hover_drain": 0.085, "input_coeff": 0.283, "velocity_coeff": 0.566, "accel_gain": 0.1},
    "fixedwing": {},
    "solver": {
        "max_outer_iterations": 50,
        "max_inner_iterations": 200,
        "constraint_tolerance": 1e-6,
        "optimality_tolerance": 1e-6,
        "initial_penalty": 10.0,
        "penalty_growth_factor": 10.0,
        "hessian": "structured",
    },
    "output": {"directory": "out"},
}


# descriptors replaced as a whole rather than merged key by key
_ATOMIC = ("reference",)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if key not in _ATOMIC and isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _path(err: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in err.absolute_path)


def validate_config(doc: dict) -> dict:
    """Check ``doc`` against the schema and cross-field rules; return it with defaults filled."""
    if not isinstance(doc, dict):
        raise ConfigError("", "config must be a JSON object")
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        err = errors[0]
        raise ConfigError(_path(err), err.message)
    full = _merge(DEFAULTS, doc)
    if "schedule" in doc and "epsilon" not in doc["schedule"]:
        full["schedule"]["epsilon"] = DEFAULTS["schedule"]["epsilon"]

    sch = full["schedule"]
    n = len(sch["k1"])
    if len(sch["k2"]) != n:
        raise ConfigError("schedule.k2", f"schedule arrays must have equal length: k1 has {n}, k2 has {len(sch['k2'])}")
    if len(sch["rho"]) not in (1, n):
        raise ConfigError("schedule.rho", f"schedule arrays must have equal length: k1 has {n}, rho has {len(sch['rho'])}")
    for key in ("k1", "k2", "rho"):
        seq = sch[key]
        if any(b < a for a, b in zip(seq, seq[1:])):
            raise ConfigError(f"schedule.{key}", "schedule values must be non-decreasing")
    if any(b > a for a, b in zip(sch["epsilon"], sch["epsilon"][1:])):
        raise ConfigError("schedule.epsilon", "schedule values must be non-increasing")

    scen = full["scenario"]
    if full["agents"] is None:
        full["agents"] = 2 if scen == "multi_1d" else 1
    agents = full["agents"]
    if scen in ("single_1d", "fixedwing_3d") and agents != 1:
        raise ConfigError("agents", f"{scen} has exactly one agent")
    if full["multi_agent_mode"] == "mpcc":
        if scen != "multi_1d" or agents != 2:
            raise ConfigError("multi_agent_mode", "mpcc requires the multi_1d scenario with exactly 2 agents")
        if full["formulation"] != "nair":
            raise ConfigError("multi_agent_mode", "mpcc applies to the nair formulation only")
    if full["charging"] and scen != "multi_1d":
        raise ConfigError("charging", "charging is only modelled for multi_1d")
    if scen == "fixedwing_3d" and full["formulation"] not in ("air_hard", "setpoint"):
        raise ConfigError("formulation", "fixedwing_3d supports air_hard and setpoint")

    hz = full["horizon"]
    free = "tf_lower" in hz or "tf_upper" in hz
    if free:
        if not ("tf_lower" in hz and "tf_upper" in hz):
            raise ConfigError("horizon", "a free horizon needs both tf_lower and tf_upper")
        if not hz["t0"] < hz["tf_lower"] < hz["tf_upper"]:
            raise ConfigError("horizon", "need t0 < tf_lower < tf_upper")
    elif not hz["tf"] > hz["t0"]:
        raise ConfigError("horizon.tf", "need tf > t0")

    ref = full["reference"]
    if ref["kind"] == "piecewise_linear":
        times = [k[0] for k in ref["knots"]]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("reference.knots", "knot times must be strictly increasing")
    dim = _reference(ref).dim
    want = 2 if scen == "fixedwing_3d" else 1
    if dim != want:
        raise ConfigError("reference", f"{scen} needs a {want}-dimensional reference, got {dim}")
    if full["range"]["alpha"] == full["range"]["beta"]:
        raise ConfigError("range", "alpha and beta must differ")
    fw = full["fixedwing"]
    lo, hi = fw.get("speed_min", 8.0), fw.get("speed_max", 25.0)
    if not lo < hi:
        raise ConfigError("fixedwing.speed_min", "speed_min must be below speed_max")
    return full


def _reference(ref: dict) -> ReferenceSignal:
    kind = ref["kind"]
    if kind == "constant":
        return ReferenceSignal.constant(ref["value"])
    if kind == "piecewise_linear":
        return ReferenceSignal.piecewise_linear([(k[0], k[1]) for k in ref["knots"]])
    return ReferenceSignal.sinusoid(ref["amplitude"], ref["period"], ref.get("offset", 0.0), ref.get("phase", 0.0))


def reference_from_dict(ref: dict) -> ReferenceSignal:
    """Build a :class:`ReferenceSignal` from its config descriptor."""
    try:
        return _reference(ref)
    except OcpValidationError as exc:
        raise ConfigError(exc.field_name, str(exc)) from exc


@dataclass
class RunConfig:
    """A validated run configuration (defaults filled in)."""

    data: Dict[str, Any]
    source: Optional[str] = None
    _scenario: Optional[Scenario] = field(default=None, repr=False)

    @property
    def scenario_name(self) -> str:
        return self.data["scenario"]

    @property
    def formulation(self) -> str:
        return self.data["formulation"]

    @property
    def mode(self) -> str:
        return self.data["multi_agent_mode"]

    @property
    def name(self) -> str:
        if self.data["name"]:
            return self.data["name"]
        return Path(self.source).stem if self.source else f"{self.scenario_name}_{self.formulation}"

    @property
    def output_directory(self) -> str:
        return self.data["output"]["directory"]

    def schedule(self) -> ContinuationSchedule:
        s = self.data["schedule"]
        return ContinuationSchedule(
            k1=tuple(s["k1"]), k2=tuple(s["k2"]), rho=tuple(s["rho"]), gamma=s["gamma"], regularizer=s["regularizer"], epsilon=tuple(s["epsilon"])
        )

    def solver_options(self) -> SolverOptions:
        return SolverOptions(**self.data["solver"])

    def scenario_config(self) -> ScenarioConfig:
        d = self.data
        m, w, b, hz, r = d["mission"], d["weights"], d["battery"], d["horizon"], d["range"]
        charging = None
        if d["charging"]:
            ch = dict(b.get("charging", {}))
            ch.setdefault("base_position", m["base_position"])
            charging = ChargingModel(**ch)
        battery = BatteryModel(**{k: v for k, v in b.items() if k != "charging"}, charging=charging)
        fw = dict(d["fixedwing"])
        fw_initial = fw.pop("initial_state", None)
        free = "tf_lower" in hz
        kw = dict(
            t0=hz["t0"],
            tf=hz["tf_upper"] if free else hz["tf"],
            free_tf=(hz["tf_lower"], hz["tf_upper"]) if free else None,
            K=d["mesh"]["K"],
            delta=r["delta"],
            alpha=r["alpha"],
            beta=r["beta"],
            reference=reference_from_dict(d["reference"]),
            agents=d["agents"],
            battery=battery,
            aggregation=d["aggregation"],
            fixedwing=FixedWingModel(**fw),
            Q=w["Q"],
            R=w["R"],
            energy_weight=w["energy_weight"],
            soft_weight=w["soft_weight"],
            soft_rho=w["soft_rho"],
            fw_input_weight=w["fixedwing_input"],
            **m,
        )
        if fw_initial is not None:
            kw["fw_initial"] = tuple(float(v) for v in fw_initial)
        return ScenarioConfig(**kw)

    def scenario(self) -> Scenario:
        if self._scenario is None:
            try:
                self._scenario = make_scenario(self.scenario_name, self.formulation, self.scenario_config(), charging=self.data["charging"])
            except OcpValidationError as exc:
                raise ConfigError(exc.field_name, str(exc)) from exc
            except (TypeError, ValueError) as exc:
                raise ConfigError("", str(exc)) from exc
        return self._scenario

    def with_overrides(self, **changes) -> "RunConfig":
        """Copy with top-level (or nested dict) keys replaced, re-validated."""
        raw = _merge(self.data, changes)
        return parse_config(raw, self.source)

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)


def parse_config(doc: dict, source: Optional[str] = None) -> RunConfig:
    """Validate a config mapping and wrap it."""
    full = validate_config(doc)
    rc = RunConfig(full, source)
    try:
        rc.schedule()
        rc.solver_options()
    except ValueError as exc:
        raise ConfigError("schedule" if "schedule" in str(exc) or "epsilon" in str(exc) else "solver", str(exc)) from exc
    rc.scenario()
    return rc


def load_config(path) -> RunConfig:
    """Read and validate a JSON config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path} is not valid JSON: {exc}") from exc
    return parse_config(doc, str(path))


def shipped_configs() -> List[Path]:
    """Paths of the configs bundled with the package, sorted by name."""
    root = resources.files("inrange") / "configs"
    return sorted(Path(str(p)) for p in root.iterdir() if p.name.endswith(".json"))


def shipped_config(name: str) -> Path:
    """Path of a bundled config by file stem (``"single_1d_nair"`` etc.)."""
    for p in shipped_configs():
        if p.stem == name:
            return p
    raise KeyError(f"no shipped config named {name!r}")

