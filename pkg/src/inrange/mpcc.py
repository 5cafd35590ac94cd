"""Exact two-agent minimum through a complementarity reformulation.

``min{l1, l2} = min_{q in [-1, 0]} l1 + (l1 - l2) q``. Replacing the inner
minimisation by its KKT system

    (l1 - l2) - lam1 + lam2 = 0,   0 <= lam1 _|_ (1 + q) >= 0,   0 <= lam2 _|_ -q >= 0

gives an MPCC, solved here with Scholtes-style relaxed complementarity
``lam1 (1 + q) <= eps`` and ``lam2 (-q) <= eps`` driven towards zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .ocp import PointFunction
from .transcription import NlpBlock, NlpProblem, Transcription, _point_partials

__all__ = ["MpccAugmentation", "augment_transcription", "inner_optimal_q", "mpcc_min_value"]

KKT_MODES = ("relaxed", "bilevel-penalty")


def mpcc_min_value(l1, l2, q):
    """``l1 + (l1 - l2) q`` for ``q`` in ``[-1, 0]``."""
    q = np.asarray(q, dtype=float)
    if np.any(q < -1.0) or np.any(q > 0.0) or not np.all(np.isfinite(q)):
        raise ValueError("q must lie in [-1, 0]")
    l1 = np.asarray(l1, dtype=float)
    l2 = np.asarray(l2, dtype=float)
    # convex-combination form: exact at both endpoints
    out = (1.0 + q) * l1 - q * l2
    return float(out) if out.ndim == 0 else out


def inner_optimal_q(l1, l2):
    """Endpoint minimiser of ``(l1 - l2) q`` over ``[-1, 0]`` (``0`` on ties)."""
    return np.where(np.asarray(l1) > np.asarray(l2), -1.0, 0.0)


def _inner_kkt(l1, l2):
    """Exact inner solution ``(q, lam1, lam2)`` at each point."""
    diff = np.asarray(l1, dtype=float) - np.asarray(l2, dtype=float)
    q = inner_optimal_q(l1, l2)
    return q, np.maximum(diff, 0.0), np.maximum(-diff, 0.0)


@dataclass
class MpccAugmentation:
    """Bookkeeping of the appended decision variables.

    The augmented vector is ``[z_base, q (P), lam1 (P), lam2 (P)]``; in
    ``bilevel-penalty`` mode only ``q`` is appended.
    """

    transcription: Transcription
    agent_costs: PointFunction
    epsilon: float
    kkt_mode: str
    base_size: int
    nlp: Optional[NlpProblem] = None

    @property
    def P(self) -> int:
        return self.transcription.P

    @property
    def has_multipliers(self) -> bool:
        return self.kkt_mode == "relaxed"

    def split(self, z):
        n0, P = self.base_size, self.P
        z = np.asarray(z, dtype=float)
        q = z[n0 : n0 + P]
        if not self.has_multipliers:
            return z[:n0], q, None, None
        return z[:n0], q, z[n0 + P : n0 + 2 * P], z[n0 + 2 * P : n0 + 3 * P]

    def agent_cost_values(self, z_base):
        tr = self.transcription
        X, U, p, tf, t = tr.grid(z_base)
        ev = self.agent_costs(X, U, p, t)
        return np.asarray(ev.value, dtype=float)

    def initial_guess(self, z_base):
        """Append the exact inner solution at ``z_base``."""
        l = self.agent_cost_values(z_base)
        q, lam1, lam2 = _inner_kkt(l[:, 0], l[:, 1])
        parts = [np.asarray(z_base, dtype=float), q]
        if self.has_multipliers:
            parts += [lam1, lam2]
        return np.concatenate(parts)

    def base(self, z):
        return self.split(z)[0]


def augment_transcription(
    nlp: NlpProblem,
    agent_costs: PointFunction,
    epsilon: float = 1e-4,
    kkt_mode: str = "relaxed",
    replace_block: str = "lagrange:inrange",
    bilevel_weight: float = 1.0,
) -> MpccAugmentation:
    """Replace the aggregated two-agent stage cost by its complementarity form.

    ``agent_costs`` returns the two per-agent stage costs ``(l1, l2)`` per
    point. The block named ``replace_block`` (if present) is dropped from the
    objective. Returns the augmentation; its ``nlp`` attribute is the new
    problem.
    """
    if kkt_mode not in KKT_MODES:
        raise ValueError(f"kkt_mode must be one of {KKT_MODES}, got {kkt_mode!r}")
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    tr = nlp.meta.get("transcription")
    if tr is None:
        raise ValueError("nlp must come from a Transcription")
    if tr.ocp.agent_count != 2 or agent_costs.out_dim != 2:
        raise ValueError("the complementarity reformulation is defined for exactly two agents")

    P = tr.P
    n0 = nlp.n
    n_extra = 3 * P if kkt_mode == "relaxed" else P
    n = n0 + n_extra
    aug = MpccAugmentation(tr, agent_costs, float(epsilon), kkt_mode, n0)
    L = tr.layout
    iq = n0 + np.arange(P)
    il1 = n0 + P + np.arange(P)
    il2 = n0 + 2 * P + np.arange(P)

    def pad(J):
        J = sp.csr_matrix(J)
        return sp.hstack([J, sp.csr_matrix((J.shape[0], n_extra))], format="csr")

    def wrap(block: NlpBlock) -> NlpBlock:
        if block.kind == "objective":

            def fn(z, _f=block.fn):
                v, g = _f(z[:n0])
                return v, np.concatenate([g, np.zeros(n_extra)])

        else:

            def fn(z, _f=block.fn):
                v, J = _f(z[:n0])
                return v, pad(J)

        terms = None
        if block.terms is not None:

            def terms(z, _t=block.terms):
                v, J = _t(z[:n0])
                return v, pad(J)

        return NlpBlock(block.name, block.kind, block.size, fn, terms)

    def costs_and_jac(z):
        X, U, p, tf, t = tr.grid(z[:n0])
        val, dX, dU, dP, dT = _point_partials(agent_costs(X, U, p, t), P, 2, L.nx, L.nu, L.n_params)
        J = tr._point_jacobian(dX, dU, dP, dT)  # rows k * 2 + j
        return val, J, tf

    def objective(z):
        l, J, tf = costs_and_jac(z)
        span = tf - L.t0
        w = tr.quad * span
        q = z[iq]
        d = l[:, 0] - l[:, 1]
        stage = (1.0 + q) * l[:, 0] - q * l[:, 1]
        coeff_1, coeff_2 = 1.0 + q, -q
        if kkt_mode == "bilevel-penalty":
            stage = stage + bilevel_weight * d * q
            coeff_1 = coeff_1 + bilevel_weight * q
            coeff_2 = coeff_2 - bilevel_weight * q
        c = np.column_stack([w * coeff_1, w * coeff_2]).ravel()
        g = np.zeros(n)
        g[:n0] = J.T @ c
        g[iq] = w * d * (1.0 + (bilevel_weight if kkt_mode == "bilevel-penalty" else 0.0))
        if L.free_tf:
            g[L.tf_index] += tr.quad @ stage
        return float(w @ stage), g

    def stationarity(z):
        l, J, _ = costs_and_jac(z)
        val = l[:, 0] - l[:, 1] - z[il1] + z[il2]
        D = sp.csr_matrix(J[0::2] - J[1::2])
        rows = np.arange(P)
        extra = sp.csr_matrix(
            (np.concatenate([-np.ones(P), np.ones(P)]), (np.concatenate([rows, rows]), np.concatenate([il1, il2]) - n0)),
            shape=(P, n_extra),
        )
        return val, sp.hstack([D, extra], format="csr")

    eps = float(epsilon)

    def complementarity(z):
        q, l1, l2 = z[iq], z[il1], z[il2]
        val = np.concatenate([l1 * (1.0 + q) - eps, l2 * (-q) - eps])
        rows = np.arange(2 * P)
        r = np.concatenate([rows[:P], rows[:P], rows[P:], rows[P:]])
        c = np.concatenate([iq, il1, iq, il2]) - n0
        data = np.concatenate([l1, 1.0 + q, -l2, -q])
        J = sp.csr_matrix((data, (r, c)), shape=(2 * P, n_extra))
        return val, sp.hstack([sp.csr_matrix((2 * P, n0)), J], format="csr")

    blocks = [wrap(b) for b in nlp.blocks if b.name != replace_block]
    blocks.append(NlpBlock("mpcc:objective", "objective", 1, objective))
    lower = np.concatenate([nlp.lower, -np.ones(P)])
    upper = np.concatenate([nlp.upper, np.zeros(P)])
    extra_vars = [np.array([iq[k]]) for k in range(P)]
    if kkt_mode == "relaxed":
        blocks.append(NlpBlock("mpcc:stationarity", "eq", P, stationarity))
        blocks.append(NlpBlock("mpcc:complementarity", "ineq", 2 * P, complementarity))
        lower = np.concatenate([lower, np.zeros(2 * P)])
        upper = np.concatenate([upper, np.full(2 * P, np.inf)])
        extra_vars = [np.array([iq[k], il1[k], il2[k]]) for k in range(P)]
    pattern = tr.hessian_pattern(extra_point_vars=extra_vars, n=n)
    meta = dict(nlp.meta)
    meta["mpcc"] = aug
    aug.nlp = NlpProblem(n, blocks, lower, upper, layout=L, meta=meta, hessian_pattern=pattern)
    return aug
