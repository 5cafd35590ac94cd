"""Shipped-config runs shared between test modules.

Each run is solved once per session; the wall time of that first solve is
kept next to the result so runtime budgets can be checked without re-solving.
"""

import functools
import time
import warnings

from inrange.config import load_config, shipped_config
from inrange.runner import run_config


@functools.lru_cache(maxsize=None)
def shipped_run(name: str):
    """``(RunResult, wall_seconds)`` for a bundled config."""
    rc = load_config(shipped_config(name))
    t = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        result = run_config(rc)
    return result, time.perf_counter() - t


def grid_interval(result) -> float:
    t = result.trajectory.times
    return float(t[1] - t[0])
