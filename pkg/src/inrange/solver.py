"""Augmented-Lagrangian NLP solver.

Outer loop: Powell-Hestenes-Rockafellar augmented Lagrangian over equality
and inequality constraints, first-order multiplier updates, and a penalty that
grows when infeasibility stalls.

Inner loop: projected Newton-type minimisation of the augmented Lagrangian
with bounds. The model Hessian is ``B + mu J'J`` where ``J`` stacks the
equality rows and the currently active inequality rows; the penalty part is
formed exactly from the constraint Jacobians. ``B`` is the Lagrangian Hessian:

* when the problem declares a Hessian sparsity pattern, ``B`` is obtained by
  finite differences of the analytic Lagrangian gradient over structurally
  orthogonal column groups (a handful of gradient evaluations for collocation
  problems), and indefiniteness is handled by an adaptive diagonal shift;
* otherwise ``B`` is a limited-memory BFGS approximation (history 10) applied
  through a Woodbury correction.

Bounds are handled with Bertsekas' projected Newton active set and a
projected Armijo search.

Everything is deterministic for fixed inputs.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import IO, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .transcription import NlpProblem

__all__ = ["NlpSolution", "SolverOptions", "solve"]

logger = logging.getLogger(__name__)

_MULTIPLIER_CAP = 1e10
_STALL_RAISES = 3


@dataclass(frozen=True)
class SolverOptions:
    max_outer_iterations: int = 50
    max_inner_iterations: int = 200
    constraint_tolerance: float = 1e-6
    optimality_tolerance: float = 1e-6
    initial_penalty: float = 10.0
    penalty_growth_factor: float = 10.0
    max_penalty: float = 1e10
    history: int = 10
    hessian: str = "structured"
    hessian_differences: str = "forward"
    inertia_check: bool = False

    def __post_init__(self):
        if self.hessian not in ("structured", "lbfgs"):
            raise ValueError("hessian must be 'structured' or 'lbfgs'")
        if self.hessian_differences not in ("forward", "central"):
            raise ValueError("hessian_differences must be 'forward' or 'central'")
        if not (self.constraint_tolerance > 0 and self.optimality_tolerance > 0):
            raise ValueError("tolerances must be > 0")
        if not self.penalty_growth_factor > 1:
            raise ValueError("penalty_growth_factor must be > 1")
        if not self.initial_penalty > 0:
            raise ValueError("initial_penalty must be > 0")
        if self.max_outer_iterations < 1 or self.max_inner_iterations < 1:
            raise ValueError("iteration limits must be >= 1")
        if self.history < 1:
            raise ValueError("history must be >= 1")

    def replace(self, **changes) -> "SolverOptions":
        return replace(self, **changes)


@dataclass
class NlpSolution:
    """Result of :func:`solve`.

    ``stationarity`` is the infinity norm of the projected Lagrangian gradient
    divided by ``max(1, |grad f|_inf)``.
    """

    z: np.ndarray
    objective: float
    eq_residual: float
    ineq_violation: float
    stationarity: float
    multipliers_eq: np.ndarray
    multipliers_ineq: np.ndarray
    status: str
    outer_iterations: int
    inner_iterations: int
    wall_time: float
    penalty: float
    message: str = ""
    history: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def violation(self) -> float:
        return max(self.eq_residual, self.ineq_violation)

    def warm_start(self) -> dict:
        """Keyword arguments that restart :func:`solve` from this solution."""
        return {
            "multipliers_eq": self.multipliers_eq,
            "multipliers_ineq": self.multipliers_ineq,
            "penalty": self.penalty,
        }


def _inf_norm(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


def _finite(ev) -> bool:
    return bool(
        np.isfinite(ev.f)
        and np.all(np.isfinite(ev.grad))
        and np.all(np.isfinite(ev.c_eq))
        and np.all(np.isfinite(ev.c_ineq))
    )


def color_columns(pattern):
    """Greedy partition of the columns of ``pattern`` into structurally orthogonal groups.

    Returns ``(color, n_groups)``; columns sharing a color have disjoint row
    supports, so one finite difference recovers all of them.
    """
    P = sp.csc_matrix(pattern)
    n = P.shape[1]
    color = np.full(n, -1, dtype=int)
    used: list = []
    order = np.argsort(-np.diff(P.indptr), kind="stable")
    for c in order:
        rows = P.indices[P.indptr[c] : P.indptr[c + 1]]
        for gi, mask in enumerate(used):
            if not mask[rows].any():
                mask[rows] = True
                color[c] = gi
                break
        else:
            mask = np.zeros(P.shape[0], dtype=bool)
            mask[rows] = True
            used.append(mask)
            color[c] = len(used) - 1
    return color, len(used)


class _FdHessian:
    """Lagrangian Hessian from differences of its analytic gradient.

    ``scheme`` is ``"forward"`` (one gradient per column group) or
    ``"central"`` (two, with second-order accurate entries).
    """

    def __init__(self, pattern, scheme: str = "forward", check_inertia: bool = True):
        P = sp.coo_matrix(pattern)
        self.n = P.shape[0]
        self.rows, self.cols = P.row, P.col
        self.color, self.n_groups = color_columns(pattern)
        self.scheme = scheme
        self.check_inertia = check_inertia
        self.tau = 0.0

    def __call__(self, nlp, z, g0, lam_hat, nu_hat):
        central = self.scheme == "central"
        steps = (6e-6 if central else 1e-7) * np.maximum(1.0, np.abs(z))
        D = np.zeros((self.n, self.n_groups))
        for gi in range(self.n_groups):
            dz = np.where(self.color == gi, steps, 0.0)
            gp = _Augmented.lagrangian_grad(nlp.evaluate(z + dz), lam_hat, nu_hat)
            if central:
                gm = _Augmented.lagrangian_grad(nlp.evaluate(z - dz), lam_hat, nu_hat)
                D[:, gi] = 0.5 * (gp - gm)
            else:
                D[:, gi] = gp - g0
        vals = D[self.rows, self.color[self.cols]] / steps[self.cols]
        H = sp.csr_matrix((vals, (self.rows, self.cols)), shape=(self.n, self.n))
        return 0.5 * (H + H.T)


class _Memory:
    """Limited-memory BFGS pairs in compact form ``B = sigma I - W K^-1 W'``."""

    def __init__(self, size: int):
        self.size = size
        self.S: list = []
        self.Y: list = []
        self.sigma = 1.0

    def push(self, s, y):
        sy = float(s @ y)
        if sy <= 0 or sy <= 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            return
        self.S.append(s)
        self.Y.append(y)
        if len(self.S) > self.size:
            self.S.pop(0)
            self.Y.pop(0)
        self.sigma = float(np.clip((y @ y) / sy, 1e-8, 1e8))

    def compact(self):
        if not self.S:
            return None, None
        S = np.column_stack(self.S)
        Y = np.column_stack(self.Y)
        SY = S.T @ Y
        D = np.diag(np.diag(SY))
        Lo = np.tril(SY, -1)
        W = np.hstack([Y, self.sigma * S])
        Kmat = np.block([[-D, Lo.T], [Lo, self.sigma * (S.T @ S)]])
        return W, Kmat


@dataclass
class _Point:
    z: np.ndarray
    ev: object
    phi: float
    grad: np.ndarray
    lam_hat: np.ndarray
    nu_hat: np.ndarray


class _Augmented:
    def __init__(self, nlp, lam, nu, mu):
        self.nlp = nlp
        self.lam = lam
        self.nu = nu
        self.mu = mu

    def at(self, z) -> Optional[_Point]:
        ev = self.nlp.evaluate(z)
        if not _finite(ev):
            return None
        mu = self.mu
        lam_hat = self.lam + mu * ev.c_eq
        nu_hat = np.maximum(0.0, self.nu + mu * ev.c_ineq)
        phi = ev.f
        g = ev.grad.copy()
        if ev.c_eq.size:
            phi += self.lam @ ev.c_eq + 0.5 * mu * (ev.c_eq @ ev.c_eq)
            g += ev.J_eq.T @ lam_hat
        if ev.c_ineq.size:
            phi += (nu_hat @ nu_hat - self.nu @ self.nu) / (2.0 * mu)
            g += ev.J_ineq.T @ nu_hat
        return _Point(z, ev, float(phi), g, lam_hat, nu_hat)

    @staticmethod
    def lagrangian_grad(ev, lam_hat, nu_hat):
        g = ev.grad.copy()
        if ev.c_eq.size:
            g += ev.J_eq.T @ lam_hat
        if ev.c_ineq.size:
            g += ev.J_ineq.T @ nu_hat
        return g

    def penalty_matrix(self, pt: _Point):
        ev = pt.ev
        rows = []
        if ev.c_eq.size:
            rows.append(ev.J_eq)
        if ev.c_ineq.size:
            active = (self.nu + self.mu * ev.c_ineq) > 0
            if np.any(active):
                rows.append(ev.J_ineq[np.flatnonzero(active)])
        if not rows:
            return sp.csr_matrix((pt.z.size, pt.z.size))
        J = sp.vstack(rows, format="csr")
        return (self.mu * (J.T @ J)).tocsr()


def _newton_direction(H_pen, memory: _Memory, g, free):
    """Solve ``(B + H_pen)_FF d = -g_F`` on the free variables."""
    idx = np.flatnonzero(free)
    A = (H_pen[idx][:, idx] + memory.sigma * sp.identity(idx.size, format="csr")).tocsc()
    try:
        lu = spla.splu(A)
    except RuntimeError:
        return None
    d = lu.solve(-g[idx])
    W, Kmat = memory.compact()
    if W is not None:
        WF = W[idx]
        AinvW = lu.solve(WF)
        try:
            corr = sla.solve(Kmat - WF.T @ AinvW, WF.T @ d)
        except (sla.LinAlgError, ValueError):
            corr = None
        if corr is not None and np.all(np.isfinite(corr)):
            d = d + AinvW @ corr
    out = np.zeros_like(g)
    out[idx] = d
    return out


def _factor_if_positive(M, check_inertia=True):
    """Sparse LU with symmetric diagonal pivoting; ``None`` unless all pivots are positive.

    With diagonal pivots the factorisation is an ``L D L'`` in disguise, so the
    signs of ``diag(U)`` give the inertia of ``M``. Without ``check_inertia``
    any nonsingular factorisation is returned.
    """
    try:
        if not check_inertia:
            return spla.splu(M, permc_spec="MMD_AT_PLUS_A")
        lu = spla.splu(M, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
    except RuntimeError:
        return None
    piv = lu.U.diagonal()
    if not np.all(np.isfinite(piv)) or np.any(piv <= 0):
        return None
    return lu


def _shifted_direction(A, g, free, hess: "_FdHessian"):
    """Newton step on the free variables with the smallest positive-definite diagonal shift."""
    idx = np.flatnonzero(free)
    A_FF = A[idx][:, idx].tocsc()
    gF = g[idx]
    base = max(1e-10, float(np.mean(np.abs(A_FF.diagonal()))) * 1e-8)
    tau = hess.tau
    eye = sp.identity(idx.size, format="csc")
    for _ in range(40):
        lu = _factor_if_positive((A_FF + tau * eye).tocsc(), hess.check_inertia)
        if lu is not None:
            d = lu.solve(-gF)
            if np.all(np.isfinite(d)) and gF @ d < 0:
                hess.tau = tau
                out = np.zeros_like(g)
                out[idx] = d
                return out
        tau = max(4.0 * tau, base)
    return None


def _inner_solve(aug: _Augmented, pt: _Point, lo, hi, memory: _Memory, tol, max_iter, hess: Optional[_FdHessian] = None):
    """Projected Newton-type minimisation of the augmented Lagrangian."""
    for it in range(max_iter):
        z, g = pt.z, pt.grad
        pg_norm = _inf_norm(np.clip(z - g, lo, hi) - z)
        if pg_norm <= tol:
            return pt, it, "converged"
        eps = min(1e-8 + pg_norm, 1e-3)
        at_bound = ((z <= lo + eps) & (g > 0)) | ((z >= hi - eps) & (g < 0))
        free = ~at_bound
        H_pen = aug.penalty_matrix(pt)
        if hess is not None:
            A = (H_pen + hess(aug.nlp, z, aug.lagrangian_grad(pt.ev, pt.lam_hat, pt.nu_hat), pt.lam_hat, pt.nu_hat)).tocsr()
            diag = np.maximum(np.abs(A.diagonal()), 1e-8)
        else:
            A = None
            diag = H_pen.diagonal() + memory.sigma
        new = None
        for attempt in range(4 if hess is not None else 1):
            d = np.zeros_like(z)
            if np.any(free):
                if hess is not None:
                    dn = _shifted_direction(A, g, free, hess)
                else:
                    dn = _newton_direction(H_pen, memory, g, free)
                if dn is None or not np.all(np.isfinite(dn)) or g[free] @ dn[free] >= 0:
                    dn = np.where(free, -g / diag, 0.0)
                d = dn
            d = np.where(free, d, -g / diag)
            new = _line_search(aug, pt, d, free, at_bound, lo, hi)
            if new is not None or hess is None:
                break
            # poor model: stiffen the shift and retry
            hess.tau = max(100.0 * hess.tau, 1e-6 * float(np.max(diag)))
        if new is None:
            return pt, it + 1, "line search failed"
        if hess is not None:
            # Levenberg-Marquardt style shift update from the model fit
            step = new.z - z
            predicted = -(g @ step + 0.5 * step @ (A @ step))
            actual = pt.phi - new.phi
            ratio = actual / predicted if predicted > 0 else 0.0
            floor = 1e-10 * float(np.max(diag))
            if ratio > 0.75:
                hess.tau = hess.tau / 3.0 if hess.tau > floor else 0.0
            elif ratio < 0.25:
                hess.tau = max(4.0 * hess.tau, floor * 100.0)
        else:
            s = new.z - z
            y = new.grad - aug.lagrangian_grad(pt.ev, new.lam_hat, new.nu_hat)
            memory.push(s, y)
        pt = new
    return pt, max_iter, "iteration limit"


def _line_search(aug, pt, d, free, at_bound, lo, hi):
    z, g = pt.z, pt.grad
    alpha = 1.0
    for _ in range(40):
        z_try = np.clip(z + alpha * d, lo, hi)
        decrease = -alpha * (g[free] @ d[free]) + g[at_bound] @ (z[at_bound] - z_try[at_bound])
        cand = aug.at(z_try)
        if cand is not None and cand.phi <= pt.phi - 1e-4 * decrease:
            return cand
        alpha *= 0.5
    return None


def solve(
    nlp: NlpProblem,
    initial_guess,
    opts: Optional[SolverOptions] = None,
    *,
    multipliers_eq=None,
    multipliers_ineq=None,
    penalty: Optional[float] = None,
    log_stream: Optional[IO[str]] = None,
) -> NlpSolution:
    """Solve ``nlp`` from ``initial_guess``.

    Multipliers and penalty from a previous :class:`NlpSolution` (see
    :meth:`NlpSolution.warm_start`) may be passed to warm start.
    ``log_stream`` receives one line per outer iteration.
    """
    opts = opts or SolverOptions()
    start = time.perf_counter()
    lo, hi = nlp.lower, nlp.upper
    z = np.asarray(initial_guess, dtype=float).copy()
    if z.shape != (nlp.n,):
        raise ValueError(f"initial guess has shape {z.shape}, expected ({nlp.n},)")
    if not np.all(np.isfinite(z)):
        raise ValueError("initial guess has non-finite entries")
    z = np.clip(z, lo, hi)
    n_eq, n_in = nlp.n_eq, nlp.n_ineq
    lam = np.zeros(n_eq) if multipliers_eq is None else np.asarray(multipliers_eq, dtype=float).copy()
    nu = np.zeros(n_in) if multipliers_ineq is None else np.asarray(multipliers_ineq, dtype=float).copy()
    mu = float(opts.initial_penalty if penalty is None else penalty)
    ctol, otol = opts.constraint_tolerance, opts.optimality_tolerance

    history: list = []

    def result(status, ev, outer, inner, msg, stat):
        return NlpSolution(
            z=z.copy(),
            objective=float(ev.f),
            eq_residual=_inf_norm(ev.c_eq),
            ineq_violation=float(max(0.0, np.max(ev.c_ineq))) if n_in else 0.0,
            stationarity=float(stat),
            multipliers_eq=lam.copy(),
            multipliers_ineq=nu.copy(),
            status=status,
            outer_iterations=outer,
            inner_iterations=inner,
            wall_time=time.perf_counter() - start,
            penalty=mu,
            message=msg,
            history=history,
        )

    ev = nlp.evaluate(z)
    if not _finite(ev):
        return result("diverged", ev, 0, 0, "non-finite evaluation at the initial guess", np.inf)

    if multipliers_eq is not None or multipliers_ineq is not None:
        # a warm start may already be a KKT point: another multiplier update
        # would only perturb it
        comp = np.minimum(-ev.c_ineq, nu / mu) if n_in else np.zeros(0)
        viol = max(_inf_norm(ev.c_eq), float(max(0.0, np.max(ev.c_ineq))) if n_in else 0.0)
        g_lag = _Augmented.lagrangian_grad(ev, lam, nu)
        stat0 = _inf_norm(np.clip(z - g_lag, lo, hi) - z) / max(1.0, _inf_norm(ev.grad))
        if viol <= ctol and max(_inf_norm(ev.c_eq), _inf_norm(comp)) <= ctol and stat0 <= otol:
            if log_stream is not None:
                log_stream.write(f"outer   0  warm start satisfies tolerances (stationarity {stat0:9.2e})\n")
            return result("converged", ev, 0, 0, "warm start satisfies tolerances", stat0)

    memory = _Memory(opts.history)
    hess = _FdHessian(nlp.hessian_pattern, opts.hessian_differences, opts.inertia_check) if (nlp.hessian_pattern is not None and opts.hessian == "structured") else None
    inner_total = 0
    inner_tol = max(otol, 1e-3)
    prev_measure = np.inf
    streak: list = []
    raised = False
    prev_violation = np.inf
    status, msg, stat = "max-iterations", "outer iteration limit reached", np.inf
    outer = 0
    for outer in range(1, opts.max_outer_iterations + 1):
        aug = _Augmented(nlp, lam, nu, mu)
        pt = aug.at(z)
        if pt is None:
            status, msg = "diverged", "non-finite evaluation"
            break
        scale = max(1.0, _inf_norm(ev.grad))
        pt, nit, inner_msg = _inner_solve(aug, pt, lo, hi, memory, inner_tol * scale, opts.max_inner_iterations, hess)
        inner_total += nit
        z = pt.z
        ev = pt.ev
        if _inf_norm(z) > 1e12:
            status, msg = "diverged", "iterates unbounded"
            break

        complementarity = np.minimum(-ev.c_ineq, nu / mu) if n_in else np.zeros(0)
        lam = np.clip(pt.lam_hat, -_MULTIPLIER_CAP, _MULTIPLIER_CAP)
        nu = np.clip(pt.nu_hat, 0.0, _MULTIPLIER_CAP)

        measure = max(_inf_norm(ev.c_eq), _inf_norm(complementarity))
        violation = max(_inf_norm(ev.c_eq), float(max(0.0, np.max(ev.c_ineq))) if n_in else 0.0)
        g_lag = _Augmented.lagrangian_grad(ev, lam, nu)
        stat = _inf_norm(np.clip(z - g_lag, lo, hi) - z) / max(1.0, _inf_norm(ev.grad))

        history.append(
            {
                "outer": outer,
                "penalty": mu,
                "objective": float(ev.f),
                "violation": violation,
                "complementarity": measure,
                "stationarity": stat,
                "inner_iterations": nit,
                "inner_status": inner_msg,
            }
        )
        line = (
            f"outer {outer:3d}  penalty {mu:9.2e}  objective {ev.f: .10e}  "
            f"violation {violation:9.2e}  stationarity {stat:9.2e}  inner {nit} ({inner_msg})"
        )
        logger.debug(line)
        if log_stream is not None:
            log_stream.write(line + "\n")
        if raised and violation > prev_violation * (1 + 1e-9) + 1e-14:
            logger.info("constraint violation increased at outer iteration %d", outer)
        prev_violation = violation

        if violation <= ctol and measure <= ctol and stat <= otol:
            status, msg = "converged", "tolerances satisfied"
            break
        if measure > ctol and measure > 0.1 * prev_measure and mu < opts.max_penalty:
            mu = min(mu * opts.penalty_growth_factor, opts.max_penalty)
            raised = True
            streak.append(violation)
        else:
            streak.clear()
        # violation insensitive to several penalty increases: the iterate sits
        # at a stationary point of the infeasibility
        if len(streak) > _STALL_RAISES and violation > 100.0 * ctol and streak[-1] > 0.9 * streak[-1 - _STALL_RAISES]:
            status, msg = "diverged", f"constraint violation stalled at {violation:.3e}: problem appears locally infeasible"
            break
        prev_measure = measure
        inner_tol = max(otol, 0.1 * inner_tol)

    return result(status, ev, outer, inner_total, msg, stat)
