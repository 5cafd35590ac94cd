"""Homotopy over smoothing parameters with warm-started solves."""

from __future__ import annotations

import inspect
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .costs import SmoothingParams
from .solver import NlpSolution, SolverOptions, solve
from .transcription import NlpProblem

__all__ = ["ContinuationSchedule", "StageReport", "HomotopyResult", "run_homotopy", "DEFAULT_SCHEDULE"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContinuationSchedule:
    """Stagewise smoothing parameters, tightened monotonically.

    ``k1`` sharpens the tanh indicator, ``k2`` weakens the regulariser and
    ``rho`` sharpens the smooth max. Lists must share a length; ``rho`` may be
    a single value.
    """

    k1: Sequence[float] = (1.0, 10.0, 40.0)
    k2: Sequence[float] = (1e5, 3e5, 1e6)
    rho: Sequence[float] = (1.0,)
    gamma: float = 6.0
    regularizer: str = "hinged"
    # complementarity relaxation per stage (only used by the MPCC formulation)
    epsilon: Sequence[float] = (1e-2, 1e-3, 1e-4)

    def __post_init__(self):
        k1 = tuple(float(v) for v in self.k1)
        k2 = tuple(float(v) for v in self.k2)
        rho = tuple(float(v) for v in self.rho)
        if not k1:
            raise ValueError("schedule needs at least one stage")
        if len(k2) != len(k1):
            raise ValueError(f"k1 has {len(k1)} stages but k2 has {len(k2)}")
        if len(rho) == 1:
            rho = rho * len(k1)
        if len(rho) != len(k1):
            raise ValueError(f"k1 has {len(k1)} stages but rho has {len(rho)}")
        for name, seq in (("k1", k1), ("k2", k2), ("rho", rho)):
            if any(b < a for a, b in zip(seq, seq[1:])):
                raise ValueError(f"schedule {name} must be non-decreasing across stages, got {list(seq)}")
        eps = tuple(float(v) for v in self.epsilon) or (1e-4,)
        if any(not v > 0 for v in eps):
            raise ValueError("epsilon values must be > 0")
        if len(eps) != len(k1):
            # keep the tail of the sequence: the last stage gets the tightest value
            eps = (eps + (eps[-1],) * len(k1))[: len(k1)] if len(eps) < len(k1) else eps[-len(k1) :]
        if any(b > a for a, b in zip(eps, eps[1:])):
            raise ValueError(f"schedule epsilon must be non-increasing across stages, got {list(eps)}")
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "k1", k1)
        object.__setattr__(self, "k2", k2)
        object.__setattr__(self, "rho", rho)

    def __len__(self):
        return len(self.k1)

    def stages(self) -> List[SmoothingParams]:
        return [
            SmoothingParams(k1=a, k2=b, rho=r, gamma=self.gamma, regularizer=self.regularizer)
            for a, b, r in zip(self.k1, self.k2, self.rho)
        ]


DEFAULT_SCHEDULE = ContinuationSchedule()


@dataclass
class StageReport:
    index: int
    params: SmoothingParams
    solution: NlpSolution
    metrics: Optional[object] = None

    @property
    def converged(self) -> bool:
        return self.solution.converged


@dataclass
class HomotopyResult:
    stages: List[StageReport] = field(default_factory=list)
    aborted: bool = False
    message: str = ""

    @property
    def final(self) -> Optional[StageReport]:
        return self.stages[-1] if self.stages else None

    @property
    def converged(self) -> bool:
        return bool(self.stages) and not self.aborted and all(s.converged for s in self.stages)

    @property
    def z(self):
        return None if not self.stages else self.stages[-1].solution.z


def _call_factory(factory, params, stage):
    try:
        n_args = len(inspect.signature(factory).parameters)
    except (TypeError, ValueError):
        n_args = 1
    return factory(params, stage) if n_args >= 2 else factory(params)


def run_homotopy(
    problem_factory: Callable[[SmoothingParams], NlpProblem],
    schedule: ContinuationSchedule,
    initial_guess,
    opts: Optional[SolverOptions] = None,
    evaluate_metrics: Optional[Callable[[NlpProblem, NlpSolution], object]] = None,
    warm_start_multipliers: bool = True,
    log_stream=None,
    stage_options: Optional[Callable[[int, SolverOptions], SolverOptions]] = None,
) -> HomotopyResult:
    """Solve one NLP per stage, each warm started from the previous solution.

    ``problem_factory`` is called as ``factory(params)`` or, if it takes two
    arguments, ``factory(params, stage_index)``.

    A stage ending in ``diverged`` aborts the run; reports of earlier stages
    are kept. A stage that merely hits its iteration limit is reported but
    the run carries on from its iterate.
    """
    opts = opts or SolverOptions()
    result = HomotopyResult()
    z = np.asarray(initial_guess, dtype=float)
    warm: dict = {}
    for i, params in enumerate(schedule.stages()):
        nlp = _call_factory(problem_factory, params, i)
        stage_opts = stage_options(i, opts) if stage_options else opts
        if log_stream is not None:
            log_stream.write(f"# stage {i}: k1={params.k1:g} k2={params.k2:g} rho={params.rho:g}\n")
        sol = solve(nlp, z, stage_opts, log_stream=log_stream, **warm)
        metrics = evaluate_metrics(nlp, sol) if evaluate_metrics else None
        result.stages.append(StageReport(i, params, sol, metrics))
        log.info("stage %d (k1=%g, k2=%g): %s after %d outer iterations", i, params.k1, params.k2, sol.status, sol.outer_iterations)
        if sol.status == "diverged":
            result.aborted = True
            result.message = f"stage {i} diverged: {sol.message}"
            return result
        z = sol.z
        if warm_start_multipliers:
            warm = sol.warm_start()
            # restart the penalty moderately so the next stage can move
            warm["penalty"] = min(warm["penalty"], max(stage_opts.initial_penalty, 1e3))
    result.message = "completed"
    return result
