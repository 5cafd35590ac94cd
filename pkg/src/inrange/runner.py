"""Scenario pipeline: homotopy solve, optional MPCC refinement, exact metrics, artifacts."""

from __future__ import annotations

import io
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, List, Optional

import numpy as np

from .continuation import ContinuationSchedule, run_homotopy
from .costs import SmoothingParams
from .mpcc import augment_transcription
from .ocp import Trajectory
from .scenarios import Metrics, Scenario
from .solver import NlpSolution, SolverOptions, solve
from .transcription import Transcription

__all__ = ["RunResult", "run_scenario", "run_config", "metrics_document", "write_artifacts", "trajectory_table"]

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    scenario: Scenario
    mode: str
    stages: List[dict]
    solution: NlpSolution
    trajectory: Trajectory
    metrics: Metrics
    transcription: Transcription
    status: str
    message: str = ""
    stage_wall_times: List[float] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _stage_row(kind, index, params: SmoothingParams, sol: NlpSolution, m: Metrics, epsilon=None) -> dict:
    row = {
        "stage": index,
        "kind": kind,
        "k1": params.k1,
        "k2": params.k2,
        "rho": params.rho,
        "status": sol.status,
        "outer_iterations": sol.outer_iterations,
        "inner_iterations": sol.inner_iterations,
        "objective": sol.objective,
        "eq_residual": sol.eq_residual,
        "ineq_violation": sol.ineq_violation,
        "stationarity": sol.stationarity,
        "in_range_time": list(m.in_range_time),
        "any_in_range_time": m.any_in_range_time,
        "all_in_range_time": m.all_in_range_time,
    }
    if epsilon is not None:
        row["epsilon"] = epsilon
    return row


def _single_stage(schedule: ContinuationSchedule) -> ContinuationSchedule:
    # formulations without a smoothed indicator need no homotopy: one solve
    # at the sharpest parameters
    return ContinuationSchedule(
        k1=(schedule.k1[-1],), k2=(schedule.k2[-1],), rho=(schedule.rho[-1],), gamma=schedule.gamma,
        regularizer=schedule.regularizer, epsilon=(schedule.epsilon[-1],),
    )


def run_scenario(
    scenario: Scenario,
    schedule: Optional[ContinuationSchedule] = None,
    opts: Optional[SolverOptions] = None,
    mode: str = "smooth_max",
    log_stream: Optional[IO[str]] = None,
) -> RunResult:
    """Solve ``scenario`` and score it with the exact indicator.

    ``nair`` runs the full warm-started homotopy; the other formulations are
    solved once at the last stage's parameters. With ``mode="mpcc"`` the
    smooth-max homotopy result seeds the complementarity problem, which is
    then solved for each relaxation ``epsilon`` of the schedule at the final
    smoothing parameters.
    """
    if mode not in ("smooth_max", "mpcc"):
        raise ValueError(f"mode must be 'smooth_max' or 'mpcc', got {mode!r}")
    if mode == "mpcc" and (scenario.agent_count != 2 or scenario.formulation != "nair"):
        raise ValueError("mpcc mode needs a two-agent nair scenario")
    schedule = schedule or ContinuationSchedule()
    opts = opts or SolverOptions()
    if scenario.formulation != "nair":
        schedule = _single_stage(schedule)

    tr0 = Transcription(scenario.build(schedule.stages()[0]), scenario.mesh)
    z0 = scenario.initial_guess(tr0.layout)
    holder = {}

    def factory(params):
        tr = Transcription(scenario.build(params), scenario.mesh)
        holder["tr"] = tr
        return tr.nlp

    def evaluate(nlp, sol):
        return scenario.metrics(nlp.meta["transcription"].decode(sol.z))

    stamps = []
    t_start = time.perf_counter()

    class _Timer(io.TextIOBase):
        # stage boundaries are announced on the log stream: record their times
        def write(self, s):
            if s.startswith("# stage"):
                stamps.append(time.perf_counter())
            if log_stream is not None:
                log_stream.write(s)
            return len(s)

    homotopy = run_homotopy(factory, schedule, z0, opts, evaluate_metrics=evaluate, log_stream=_Timer())
    stamps.append(time.perf_counter())
    walls = list(np.diff(stamps))
    rows = [_stage_row("smooth_max", r.index, r.params, r.solution, r.metrics) for r in homotopy.stages]
    tr = holder["tr"]
    sol = homotopy.final.solution
    z_base = sol.z
    status = "converged" if homotopy.converged else ("diverged" if homotopy.aborted else "max-iterations")
    message = homotopy.message

    if mode == "mpcc" and not homotopy.aborted:
        params = schedule.stages()[-1]
        agent_costs = scenario.agent_costs(params)
        z = None
        # the complementarity problem starts from fresh multipliers: carrying
        # over the smooth-max ones with their large penalty slows it down
        warm: dict = {}
        for j, eps in enumerate(schedule.epsilon):
            t = time.perf_counter()
            aug = augment_transcription(tr.nlp, agent_costs, eps)
            if z is None:
                z = aug.initial_guess(z_base)
            if log_stream is not None:
                log_stream.write(f"# mpcc stage {j}: epsilon={eps:g}\n")
            sol = solve(aug.nlp, z, opts, log_stream=log_stream, **warm)
            walls.append(time.perf_counter() - t)
            z = sol.z
            warm = sol.warm_start()
            warm["penalty"] = min(warm["penalty"], max(opts.initial_penalty, 1e3))
            m = scenario.metrics(tr.decode(aug.base(z)))
            rows.append(_stage_row("mpcc", len(rows), params, sol, m, epsilon=eps))
            if sol.status == "diverged":
                status, message = "diverged", f"mpcc stage {j} diverged: {sol.message}"
                break
            if not sol.converged:
                status = "max-iterations"
        z_base = aug.base(z)
        if status == "converged":
            message = "completed"

    traj = tr.decode(z_base)
    diagnostics = {
        "status": status,
        "message": message,
        "stages": rows,
        "final": {
            "objective": sol.objective,
            "eq_residual": sol.eq_residual,
            "ineq_violation": sol.ineq_violation,
            "stationarity": sol.stationarity,
            "outer_iterations": sol.outer_iterations,
            "inner_iterations": sol.inner_iterations,
        },
    }
    metrics = scenario.metrics(traj, objective=sol.objective, diagnostics=diagnostics)
    log.info("%s/%s (%s): %s in %.1fs", scenario.name, scenario.formulation, mode, status, time.perf_counter() - t_start)
    return RunResult(scenario, mode, rows, sol, traj, metrics, tr, status, message, walls)


def run_config(rc, log_stream: Optional[IO[str]] = None) -> RunResult:
    """Run a :class:`~inrange.config.RunConfig`."""
    return run_scenario(rc.scenario(), rc.schedule(), rc.solver_options(), rc.mode, log_stream=log_stream)


def metrics_document(result: RunResult, name: str = "") -> str:
    """Deterministic JSON text of the metrics (no timings)."""
    sc = result.scenario
    doc = {
        "name": name,
        "scenario": sc.name,
        "formulation": sc.formulation,
        "multi_agent_mode": result.mode,
        "charging": bool(sc.charging),
        "agents": sc.agent_count,
        "grid_points": int(result.trajectory.times.size),
        "status": result.status,
        "metrics": result.metrics.as_dict(),
    }
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"


def trajectory_table(result: RunResult) -> str:
    """CSV with one row per grid point per agent and the exact in-range flag."""
    sc = result.scenario
    traj = result.trajectory
    mask = sc.in_range_mask(traj)
    header = ["t", "agent", *sc.state_names, *sc.input_names, "in_range"]
    lines = [",".join(header)]
    for i in range(sc.agent_count):
        S = traj.agent_states(i, sc.state_dim)
        U = traj.agent_inputs(i, sc.input_dim)
        for k, t in enumerate(traj.times):
            vals = [f"{t:.12g}", str(i), *(f"{v:.12g}" for v in S[k]), *(f"{v:.12g}" for v in U[k]), str(int(mask[k, i]))]
            lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def _atomic_write(path: Path, text: str):
    """Write ``text`` to ``path`` through a temporary file and rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_artifacts(result: RunResult, out_dir, name: str = "", log_text: str = "") -> dict:
    """Write ``trajectory.csv``, ``metrics.json`` and ``continuation.log`` into ``out_dir``."""
    out = Path(out_dir)
    paths = {"trajectory": out / "trajectory.csv", "metrics": out / "metrics.json", "log": out / "continuation.log"}
    walls = "".join(f"# stage {i} wall time {w:.3f} s\n" for i, w in enumerate(result.stage_wall_times))
    _atomic_write(paths["log"], log_text + walls)
    _atomic_write(paths["trajectory"], trajectory_table(result))
    _atomic_write(paths["metrics"], metrics_document(result, name))
    return paths
