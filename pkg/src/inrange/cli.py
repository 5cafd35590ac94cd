"""Command-line entry point: ``solve``, ``compare`` and ``check-gradients``.

Exit codes: 0 success, 1 configuration error, 2 solver failure (or, for
``check-gradients``, a derivative mismatch). Log verbosity is read from the
``INRANGE_LOG_LEVEL`` environment variable (``WARNING`` by default).
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .config import ConfigError, RunConfig, load_config
from .gradcheck import check_config_gradients
from .runner import _atomic_write, metrics_document, run_config, write_artifacts

__all__ = ["main", "cmd_solve", "cmd_compare", "cmd_check_gradients", "LOG_ENV", "GRADIENT_TOLERANCE"]

LOG_ENV = "INRANGE_LOG_LEVEL"
GRADIENT_TOLERANCE = 1e-5

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2

log = logging.getLogger("inrange")


def _setup_logging():
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)


def _config_error(exc: ConfigError) -> int:
    print(f"config error: {exc}", file=sys.stderr)
    return EXIT_CONFIG


class _Tee(io.StringIO):
    """Collects the continuation log; echoes it at DEBUG verbosity."""

    def write(self, s):
        if log.isEnabledFor(logging.DEBUG):
            sys.stderr.write(s)
        return super().write(s)


def _run(rc: RunConfig):
    buf = _Tee()
    try:
        result = run_config(rc, log_stream=buf)
    except (ValueError, TypeError) as exc:
        # invariants only detectable once the problem is assembled
        raise ConfigError("", str(exc)) from exc
    return result, buf.getvalue()


def cmd_solve(config: str, out: Optional[str] = None) -> int:
    """Solve one config and write its artifacts into ``out``."""
    try:
        rc = load_config(config)
        out_dir = Path(out or rc.output_directory)
        result, text = _run(rc)
    except ConfigError as exc:
        return _config_error(exc)
    except (ArithmeticError, RuntimeError, MemoryError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    paths = write_artifacts(result, out_dir, rc.name, text)
    m = result.metrics
    print(f"{rc.name}: {result.status}; in range {m.any_in_range_time:.6g} s of {m.horizon:.6g} s; metrics in {paths['metrics']}")
    if not result.converged:
        print(f"solver failure: {result.message}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


_BUDGET_KEYS = ("initial_soc", "final_soc_min")


def _budget(rc: RunConfig) -> dict:
    m = rc.data["mission"]
    return {k: m.get(k) for k in _BUDGET_KEYS}


def _pct(value: float, base: float) -> float:
    if base == 0:
        return 0.0 if value == 0 else float("inf") * (1 if value > 0 else -1)
    return 100.0 * (value - base) / abs(base)


_COLUMNS = (
    "name",
    "formulation",
    "multi_agent_mode",
    "status",
    "in_range_time",
    "energy_used",
    "mission_duration",
    "in_range_delta_pct",
    "energy_delta_pct",
    "duration_delta_pct",
)


def compare_rows(results) -> List[dict]:
    """Comparison rows for ``(name, RunResult)`` pairs, deltas relative to the first."""
    rows = []
    for name, res in results:
        m = res.metrics
        rows.append(
            {
                "name": name,
                "formulation": res.scenario.formulation,
                "multi_agent_mode": res.mode,
                "status": res.status,
                "in_range_time": m.any_in_range_time,
                "energy_used": float(sum(m.energy_used)),
                "mission_duration": m.horizon,
            }
        )
    base = rows[0]
    for r in rows:
        r["in_range_delta_pct"] = _pct(r["in_range_time"], base["in_range_time"])
        r["energy_delta_pct"] = _pct(r["energy_used"], base["energy_used"])
        r["duration_delta_pct"] = _pct(r["mission_duration"], base["mission_duration"])
    return rows


def _fmt(v) -> str:
    return f"{v:.12g}" if isinstance(v, float) else str(v)


def format_table(rows) -> str:
    cells = [list(_COLUMNS)] + [[_fmt(r[c]) for c in _COLUMNS] for r in rows]
    widths = [max(len(row[j]) for row in cells) for j in range(len(_COLUMNS))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells) + "\n"


def cmd_compare(configs: Sequence[str], out: str) -> int:
    """Solve several configs of one scenario and tabulate them against the first."""
    try:
        if len(configs) < 2:
            raise ConfigError("configs", "compare needs at least two configs")
        rcs = [load_config(c) for c in configs]
        first = rcs[0]
        for i, rc in enumerate(rcs[1:], start=1):
            if rc.scenario_name != first.scenario_name:
                raise ConfigError(f"configs[{i}].scenario", f"{rc.scenario_name!r} does not match {first.scenario_name!r}")
            if _budget(rc) != _budget(first):
                raise ConfigError(f"configs[{i}].mission", f"energy budget {_budget(rc)} does not match {_budget(first)}")
        results = []
        for rc in rcs:
            res, text = _run(rc)
            results.append((rc.name, res, text))
    except ConfigError as exc:
        return _config_error(exc)
    out_dir = Path(out)
    names = [n for n, _, _ in results]
    for idx, (name, res, text) in enumerate(results):
        sub = f"{idx:02d}_{name}" if names.count(name) > 1 else name
        write_artifacts(res, out_dir / sub, name, text)
    rows = compare_rows([(n, r) for n, r, _ in results])
    lines = [",".join(_COLUMNS)] + [",".join(_fmt(r[c]) for c in _COLUMNS) for r in rows]
    _atomic_write(out_dir / "comparison.csv", "\n".join(lines) + "\n")
    _atomic_write(out_dir / "comparison.json", json.dumps(rows, indent=2, sort_keys=True) + "\n")
    table = format_table(rows)
    sys.stdout.write(table)
    if any(r["status"] != "converged" for r in rows):
        print("solver failure in at least one config", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_check_gradients(config: str, samples: int = 100, seed: int = 0, corrupt: Optional[str] = None, tol: float = GRADIENT_TOLERANCE) -> int:
    """Finite-difference check of every derivative block; exit 0 iff all errors < ``tol``."""
    try:
        rc = load_config(config)
        reports = check_config_gradients(rc, samples=samples, seed=seed, sabotage=corrupt)
    except ConfigError as exc:
        return _config_error(exc)
    if corrupt is not None and not any(corrupt in r.blocks for _, r in reports):
        known = sorted({b for _, r in reports for b in r.blocks})
        print(f"config error: unknown block {corrupt!r}; blocks are {', '.join(known)}", file=sys.stderr)
        return EXIT_CONFIG
    worst = 0.0
    for label, rep in reports:
        print(f"== {label}: {rep.samples} samples")
        for line in rep.lines():
            print(line)
        worst = max(worst, rep.max_error)
    ok = worst < tol
    print(f"max relative error {worst:.3e} ({'pass' if ok else 'FAIL'}, tolerance {tol:g})")
    return EXIT_OK if ok else EXIT_SOLVER


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="inrange", description="In-range tracking trajectory optimisation.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one config and write trajectory, metrics and log")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default=None, help="output directory (default: the config's output.directory)")

    c = sub.add_parser("compare", help="solve several configs and tabulate them against the first")
    c.add_argument("--configs", nargs="+", required=True)
    c.add_argument("--out", required=True)

    g = sub.add_parser("check-gradients", help="finite-difference check of all analytic derivatives")
    g.add_argument("--config", required=True)
    g.add_argument("--samples", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tol", type=float, default=GRADIENT_TOLERANCE)
    # test hook: scale one block's analytic derivative by 1.01
    g.add_argument("--corrupt", default=None, metavar="BLOCK", help=argparse.SUPPRESS)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    if args.command == "solve":
        return cmd_solve(args.config, args.out)
    if args.command == "compare":
        return cmd_compare(args.configs, args.out)
    return cmd_check_gradients(args.config, args.samples, args.seed, args.corrupt, args.tol)


if __name__ == "__main__":
    sys.exit(main())
