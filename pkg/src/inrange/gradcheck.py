"""Finite-difference verification of NLP gradients and Jacobians.

Each block's analytic derivative is compared against central differences
along random directions, at random decision vectors. Probing with directions
keeps the cost at a few evaluations per sample regardless of the problem
size, while any wrong column shows up with probability one. The difference
step is chosen per probe from a halving sequence of Richardson estimates,
taking the pair that agree best, as sharp smoothing makes any single step
either truncation- or roundoff-limited.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import scipy.sparse as sp

from .transcription import NlpBlock, NlpProblem

__all__ = [
    "BlockReport",
    "GradientReport",
    "check_nlp_gradients",
    "check_config_gradients",
    "config_problems",
    "sample_points",
    "directional_error",
]


@dataclass
class BlockReport:
    name: str
    kind: str
    max_error: float = 0.0
    worst_sample: int = -1

    def update(self, err, idx):
        if err > self.max_error or self.worst_sample < 0:
            self.max_error = float(err)
            self.worst_sample = int(idx)


@dataclass
class GradientReport:
    blocks: Dict[str, BlockReport] = field(default_factory=dict)
    samples: int = 0

    @property
    def max_error(self) -> float:
        return max((b.max_error for b in self.blocks.values()), default=0.0)

    @property
    def worst(self) -> Optional[BlockReport]:
        if not self.blocks:
            return None
        return max(self.blocks.values(), key=lambda b: b.max_error)

    def passed(self, tol: float) -> bool:
        return self.max_error < tol

    def lines(self) -> List[str]:
        out = [f"{'term':40s} {'kind':10s} {'max rel. error':>15s}"]
        for b in sorted(self.blocks.values(), key=lambda b: b.name):
            out.append(f"{b.name:40s} {b.kind:10s} {b.max_error:15.3e}")
        w = self.worst
        if w is not None:
            out.append(f"worst offender: {w.name} ({w.max_error:.3e} at sample {w.worst_sample})")
        return out


def _as_derivative(fn, z):
    v, D = fn(z)
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if not sp.issparse(D):
        D = np.atleast_2d(np.asarray(D, dtype=float))
    return v, D


def directional_error(fn, z, d, h, levels: int = 12) -> tuple:
    """Analytic ``D d`` and a step-selected Richardson estimate of it.

    Central differences at ``h, h/2, ..., h/2**levels`` are extrapolated
    pairwise; the estimate whose successor agrees best is returned.
    """
    _, D = _as_derivative(fn, z)
    a = np.asarray(D @ d).ravel()

    def central(step):
        vp, _ = _as_derivative(fn, z + step * d)
        vm, _ = _as_derivative(fn, z - step * d)
        return (vp - vm) / (2.0 * step)

    c = [central(h * 0.5 ** j) for j in range(levels + 1)]
    r = [(4.0 * c[j + 1] - c[j]) / 3.0 for j in range(levels)]
    gaps = [np.max(np.abs(r[j] - r[j + 1]), initial=0.0) for j in range(levels - 1)]
    return a, r[int(np.argmin(gaps))] if gaps else r[0]


def _rel(a, fd) -> float:
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(fd), initial=0.0))
    diff = np.max(np.abs(a - fd), initial=0.0)
    if scale < 1e-12:
        return float(diff)
    return float(diff / scale)


def _terms_error(block: NlpBlock, z, d, step, scale=1.0) -> float:
    # integrated terms: check the per-point contributions, then that the
    # block's gradient is exactly their assembled sum
    def terms(zz):
        v, J = block.terms(zz)
        return v, J * scale

    err = _rel(*directional_error(terms, z, d, step))
    v, g = _as_derivative(lambda zz: block.fn(zz), z)
    tv, J = terms(z)
    summed = np.asarray(J.sum(axis=0)).ravel()
    return max(err, _rel(g.ravel(), summed), _rel(v, np.atleast_1d(tv.sum())))


def sample_points(
    nlp: NlpProblem,
    center,
    count: int,
    rng: np.random.Generator,
    spread: float = 0.25,
    scale=None,
) -> List[np.ndarray]:
    """Random decision vectors around ``center``, kept inside the bounds.

    Each coordinate is perturbed uniformly by up to ``scale`` (default:
    ``spread`` times its bound width, or its magnitude, at least 1, when that
    is smaller); samples keep a margin from the bounds so that the finite
    differences stay inside them.
    """
    lo, hi = nlp.lower, nlp.upper
    center = np.asarray(center, dtype=float)
    finite = np.isfinite(hi - lo)
    if scale is None:
        width = np.where(finite, hi - lo, np.maximum(1.0, np.abs(center)))
        scale = spread * np.minimum(width, np.maximum(1.0, np.abs(center)))
    scale = np.broadcast_to(np.asarray(scale, dtype=float), center.shape)
    margin = 1e-3 * np.where(finite, hi - lo, 1.0)
    out = []
    for _ in range(count):
        z = center + scale * rng.uniform(-1.0, 1.0, center.size)
        out.append(np.minimum(np.maximum(z, lo + margin), hi - margin))
    return out


def check_nlp_gradients(
    nlp: NlpProblem,
    points,
    rng: np.random.Generator,
    h: float = 1e-2,
    sabotage: Optional[str] = None,
) -> GradientReport:
    """Compare every block's derivative against central differences.

    ``sabotage`` names a block whose analytic derivative is scaled by 1.01;
    it exists to demonstrate that the check detects errors.
    """
    report = GradientReport()
    lo, hi = nlp.lower, nlp.upper
    for block in nlp.blocks:
        report.blocks[block.name] = BlockReport(block.name, block.kind)
    for idx, z in enumerate(points):
        z = np.asarray(z, dtype=float)
        d = rng.standard_normal(z.size) * np.maximum(1.0, np.abs(z))
        # keep z +- h d inside the bounds
        room = np.minimum(hi - z, z - lo)
        limit = float(np.min(room / np.abs(d)))
        step = max(min(h, 0.5 * limit), 1e-7)
        for block in nlp.blocks:
            fn = block.fn
            if block.name == sabotage:

                def fn(zz, _f=block.fn):
                    v, D = _f(zz)
                    return v, D * 1.01

            if block.terms is not None:
                err = _terms_error(block, z, d, step, scale=1.01 if block.name == sabotage else 1.0)
            else:
                err = _rel(*directional_error(fn, z, d, step))
            report.blocks[block.name].update(err, idx)
        report.samples += 1
    return report



def config_problems(rc):
    """``(label, nlp, center, scale)`` tuples to check for a run config.

    The NLP is built at the sharpest smoothing stage of the schedule; MPCC
    configs add the complementarity problem at the tightest relaxation.
    Tracked positions are sampled on the scale of the range radius, where
    the in-range costs vary.
    """
    from .mpcc import augment_transcription
    from .transcription import Transcription

    sc = rc.scenario()
    sched = rc.schedule()
    params = sched.stages()[-1]
    tr = Transcription(sc.build(params), sc.mesh)
    L = tr.layout
    z0 = sc.initial_guess(L)
    width = np.where(np.isfinite(tr.nlp.upper - tr.nlp.lower), tr.nlp.upper - tr.nlp.lower, np.inf)
    scale = 0.25 * np.minimum(width, np.maximum(1.0, np.abs(z0)))
    radius = sc.config.fixedwing.footprint_at_ceiling if sc.name == "fixedwing_3d" else sc.config.delta
    for j in range(L.nx):
        if sc.state_names[j % sc.state_dim] in ("x", "y"):
            scale[L.state_index(np.arange(L.points), j)] = 2.0 * radius
    out = [(f"{sc.name}/{sc.formulation}", tr.nlp, z0, scale)]
    if rc.mode == "mpcc":
        aug = augment_transcription(tr.nlp, sc.agent_costs(params), sched.epsilon[-1])
        extra = np.full(aug.nlp.n - tr.nlp.n, 0.25)
        out.append((f"{sc.name}/{sc.formulation}/mpcc", aug.nlp, aug.initial_guess(z0), np.concatenate([scale, extra])))
    return out


def check_config_gradients(rc, samples: int = 100, seed: int = 0, sabotage: Optional[str] = None):
    """Run :func:`check_nlp_gradients` on every problem of a run config."""
    rng = np.random.default_rng(seed)
    reports = []
    for label, nlp, center, scale in config_problems(rc):
        pts = sample_points(nlp, center, samples, rng, scale=scale)
        reports.append((label, check_nlp_gradients(nlp, pts, rng, sabotage=sabotage)))
    return reports
