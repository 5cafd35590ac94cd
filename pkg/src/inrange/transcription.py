"""Direct trapezoidal collocation of an :class:`~inrange.ocp.OcpSpec`.

The decision vector is ``[X (P x nx, row-major), U (P x nu), p, tf?]`` with
``P = K + 1`` grid points on normalised time ``tau = k / K``. A free final time
is a trailing decision variable; physical time is ``t0 + tau (tf - t0)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .ocp import FixedHorizon, OcpSpec, OcpValidationError, PointEval, Trajectory

__all__ = [
    "Layout",
    "Mesh",
    "NlpBlock",
    "NlpEval",
    "NlpProblem",
    "Transcription",
    "block_hessian_pattern",
    "decode",
    "encode",
    "transcribe",
]


@dataclass(frozen=True)
class Mesh:
    interval_count: int = 100

    def __post_init__(self):
        if not (isinstance(self.interval_count, (int, np.integer)) and self.interval_count >= 2):
            raise OcpValidationError("mesh.K", "interval count must be an integer >= 2")

    @property
    def tau(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.interval_count + 1)


@dataclass(frozen=True)
class Layout:
    """Index map between the decision vector and grid quantities."""

    points: int
    nx: int
    nu: int
    n_params: int
    free_tf: bool
    t0: float
    tf_fixed: Optional[float] = None

    @property
    def n_states(self) -> int:
        return self.points * self.nx

    @property
    def n_inputs(self) -> int:
        return self.points * self.nu

    @property
    def size(self) -> int:
        return self.n_states + self.n_inputs + self.n_params + int(self.free_tf)

    def state_index(self, k, i):
        return np.asarray(k) * self.nx + np.asarray(i)

    def input_index(self, k, j):
        return self.n_states + np.asarray(k) * self.nu + np.asarray(j)

    def param_index(self, j):
        return self.n_states + self.n_inputs + np.asarray(j)

    @property
    def tf_index(self) -> Optional[int]:
        return self.size - 1 if self.free_tf else None

    def split(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape != (self.size,):
            raise ValueError(f"decision vector has shape {z.shape}, expected ({self.size},)")
        X = z[: self.n_states].reshape(self.points, self.nx)
        U = z[self.n_states:self.n_states + self.n_inputs].reshape(self.points, self.nu)
        p = z[self.n_states + self.n_inputs:self.n_states + self.n_inputs + self.n_params]
        tf = z[-1] if self.free_tf else self.tf_fixed
        return X, U, p, float(tf)

    def join(self, X, U, p=None, tf=None) -> np.ndarray:
        parts = [np.asarray(X, dtype=float).reshape(-1), np.asarray(U, dtype=float).reshape(-1)]
        parts.append(np.zeros(self.n_params) if p is None else np.asarray(p, dtype=float).reshape(-1))
        if self.free_tf:
            if tf is None:
                raise ValueError("free final time layout needs tf")
            parts.append(np.array([float(tf)]))
        z = np.concatenate(parts)
        if z.size != self.size:
            raise ValueError("component sizes do not match the layout")
        return z

    def times(self, tf) -> np.ndarray:
        return self.t0 + np.linspace(0.0, 1.0, self.points) * (tf - self.t0)


@dataclass
class NlpBlock:
    """One named contribution to an NLP.

    ``fn(z)`` returns ``(value, derivative)``: a float and gradient vector for
    objective blocks, a vector and sparse Jacobian for ``eq``/``ineq`` blocks.
    Integrated objective blocks may also provide ``terms(z)``, the per-point
    weighted contributions (summing to the value) and their sparse Jacobian;
    derivative checks use it to avoid cancellation in the sum.
    """

    name: str
    kind: str
    size: int
    fn: Callable[[np.ndarray], Tuple[object, object]]
    terms: Optional[Callable[[np.ndarray], Tuple[object, object]]] = None


@dataclass
class NlpEval:
    f: float
    grad: np.ndarray
    c_eq: np.ndarray
    J_eq: sp.csr_matrix
    c_ineq: np.ndarray
    J_ineq: sp.csr_matrix


@dataclass
class NlpProblem:
    """Finite-dimensional problem: min f(z) s.t. c_eq = 0, c_ineq <= 0, lower <= z <= upper."""

    n: int
    blocks: List[NlpBlock]
    lower: np.ndarray
    upper: np.ndarray
    layout: Optional[Layout] = None
    meta: dict = field(default_factory=dict)
    # structural non-zeros of the Lagrangian Hessian, if known
    hessian_pattern: Optional[sp.spmatrix] = None

    def __post_init__(self):
        kinds = {b.kind for b in self.blocks}
        if not kinds <= {"objective", "eq", "ineq"}:
            raise ValueError(f"unknown block kinds {kinds}")
        if self.lower.shape != (self.n,) or self.upper.shape != (self.n,):
            raise ValueError("bound vectors must match the decision dimension")

    def blocks_of(self, kind: str) -> List[NlpBlock]:
        return [b for b in self.blocks if b.kind == kind]

    @property
    def n_eq(self) -> int:
        return sum(b.size for b in self.blocks_of("eq"))

    @property
    def n_ineq(self) -> int:
        return sum(b.size for b in self.blocks_of("ineq"))

    def evaluate(self, z) -> NlpEval:
        z = np.asarray(z, dtype=float)
        f = 0.0
        g = np.zeros(self.n)
        for b in self.blocks_of("objective"):
            val, grad = b.fn(z)
            f += val
            g += grad
        c_eq, J_eq = self._stack(z, "eq")
        c_in, J_in = self._stack(z, "ineq")
        return NlpEval(f, g, c_eq, J_eq, c_in, J_in)

    def objective(self, z) -> float:
        return sum(b.fn(z)[0] for b in self.blocks_of("objective"))

    def _stack(self, z, kind):
        vals, jacs = [], []
        for b in self.blocks_of(kind):
            v, J = b.fn(z)
            vals.append(np.asarray(v, dtype=float).reshape(-1))
            jacs.append(sp.csr_matrix(J))
        if not vals:
            return np.zeros(0), sp.csr_matrix((0, self.n))
        return np.concatenate(vals), sp.vstack(jacs, format="csr")


def block_hessian_pattern(n, point_groups, global_vars=(), coupled=()):
    """Symmetric boolean pattern: dense blocks per group plus dense global rows.

    ``point_groups`` lists index sets that interact among themselves only;
    ``coupled`` is one extra index set (e.g. boundary variables) forming its
    own dense block; ``global_vars`` interact with everything.
    """
    rows, cols = [], []
    for grp in list(point_groups) + ([coupled] if len(coupled) else []):
        g = np.asarray(grp, dtype=int)
        r, c = np.meshgrid(g, g, indexing="ij")
        rows.append(r.ravel())
        cols.append(c.ravel())
    for j in np.asarray(global_vars, dtype=int):
        everything = np.arange(n)
        rows += [everything, np.full(n, j)]
        cols += [np.full(n, j), everything]
    if not rows:
        return sp.csr_matrix((n, n), dtype=bool)
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    M = sp.csr_matrix((np.ones(r.size, dtype=bool), (r, c)), shape=(n, n))
    M.sum_duplicates()
    return M


# ---------------------------------------------------------------------------


def _z(a, shape):
    return np.zeros(shape) if a is None else np.asarray(a, dtype=float)


def _point_partials(ev: PointEval, P, c, nx, nu, npar):
    return (
        np.asarray(ev.value, dtype=float).reshape(P, c),
        _z(ev.dx, (P, c, nx)),
        _z(ev.du, (P, c, nu)),
        _z(ev.dp, (P, c, npar)),
        _z(ev.dt, (P, c)),
    )


class Transcription:
    """Trapezoidal transcription of an OCP on a uniform mesh.

    ``self.nlp`` is the resulting :class:`NlpProblem`; the pieces used to
    build it (grid weights, index arrays) stay available for augmentations
    such as the complementarity reformulation.
    """

    def __init__(self, ocp: OcpSpec, mesh: Mesh):
        self.ocp = ocp
        self.mesh = mesh
        K = mesh.interval_count
        self.K = K
        self.P = K + 1
        self.tau = mesh.tau
        h = ocp.horizon
        free = h.free
        self.layout = Layout(
            points=self.P,
            nx=ocp.nx,
            nu=ocp.nu,
            n_params=ocp.param_dim,
            free_tf=free,
            t0=float(h.t0),
            tf_fixed=None if free else float(h.tf),
        )
        # Trapezoid weights in normalised time; multiply by (tf - t0).
        self.quad = np.full(self.P, 1.0 / K)
        self.quad[[0, -1]] *= 0.5
        self.nlp = self._build()

    # -- helpers ----------------------------------------------------------

    def grid(self, z):
        X, U, p, tf = self.layout.split(z)
        t = self.layout.times(tf)
        return X, U, p, tf, t

    def _point_jacobian(self, dX, dU, dP, dT):
        """Sparse Jacobian of a pointwise vector function stacked over the grid.

        ``dX (P, c, nx)`` etc.; row ``k * c + j``.
        """
        L = self.layout
        P, c = dX.shape[0], dX.shape[1]
        k = np.arange(P)[:, None, None]
        j = np.arange(c)[None, :, None]
        rows_base = k * c + j
        data, rows, cols = [], [], []
        if L.nx:
            rows.append(np.broadcast_to(rows_base, dX.shape).ravel())
            cols.append(np.broadcast_to(L.state_index(k, np.arange(L.nx)[None, None, :]), dX.shape).ravel())
            data.append(dX.ravel())
        if L.nu:
            rows.append(np.broadcast_to(rows_base, dU.shape).ravel())
            cols.append(np.broadcast_to(L.input_index(k, np.arange(L.nu)[None, None, :]), dU.shape).ravel())
            data.append(dU.ravel())
        if L.n_params:
            rows.append(np.broadcast_to(rows_base, dP.shape).ravel())
            cols.append(np.broadcast_to(L.param_index(np.arange(L.n_params)[None, None, :]), dP.shape).ravel())
            data.append(dP.ravel())
        if L.free_tf:
            rows.append((k[:, :, 0] * c + j[:, :, 0]).ravel())
            cols.append(np.full(P * c, L.tf_index))
            data.append((dT * self.tau[:, None]).ravel())
        J = sp.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(P * c, L.size),
        )
        return J.tocsr()

    def _boundary_pieces(self, z, fnc):
        L = self.layout
        X, U, p, tf, t = self.grid(z)
        ev = fnc(L.t0, tf, X[0], X[-1], U[0], U[-1], p)
        c = fnc.out_dim
        val = np.asarray(ev.value, dtype=float).reshape(c)
        J = np.zeros((c, L.size))
        J[:, L.state_index(0, np.arange(L.nx))] += _z(ev.d_x0, (c, L.nx))
        J[:, L.state_index(L.points - 1, np.arange(L.nx))] += _z(ev.d_xf, (c, L.nx))
        if L.nu:
            J[:, L.input_index(0, np.arange(L.nu))] += _z(ev.d_u0, (c, L.nu))
            J[:, L.input_index(L.points - 1, np.arange(L.nu))] += _z(ev.d_uf, (c, L.nu))
        if L.n_params:
            J[:, L.param_index(np.arange(L.n_params))] += _z(ev.d_p, (c, L.n_params))
        if L.free_tf:
            J[:, L.tf_index] += _z(ev.d_tf, (c,))
        return val, J

    # -- blocks -----------------------------------------------------------

    def lagrange_block(self, term) -> NlpBlock:
        L = self.layout

        def fn(z):
            X, U, p, tf, t = self.grid(z)
            span = tf - L.t0
            val, dX, dU, dP, dT = _point_partials(term(X, U, p, t), self.P, 1, L.nx, L.nu, L.n_params)
            w = self.quad * span
            f = float(w @ val[:, 0])
            g = np.zeros(L.size)
            g[: L.n_states] = (w[:, None] * dX[:, 0, :]).ravel()
            g[L.n_states:L.n_states + L.n_inputs] = (w[:, None] * dU[:, 0, :]).ravel()
            if L.n_params:
                g[L.param_index(np.arange(L.n_params))] = w @ dP[:, 0, :]
            if L.free_tf:
                g[L.tf_index] = self.quad @ val[:, 0] + w @ (dT[:, 0] * self.tau)
            return f, g

        def terms(z):
            X, U, p, tf, t = self.grid(z)
            val, dX, dU, dP, dT = _point_partials(term(X, U, p, t), self.P, 1, L.nx, L.nu, L.n_params)
            w = self.quad * (tf - L.t0)
            J = sp.diags(w) @ self._point_jacobian(dX, dU, dP, dT)
            if L.free_tf:
                J = J.tolil()
                J[:, L.tf_index] = J[:, L.tf_index].toarray() + (self.quad * val[:, 0])[:, None]
            return w * val[:, 0], sp.csr_matrix(J)

        return NlpBlock(f"lagrange:{term.name}", "objective", 1, fn, terms)

    def mayer_block(self, term) -> NlpBlock:
        def fn(z):
            val, J = self._boundary_pieces(z, term)
            return float(val[0]), J[0]

        return NlpBlock(f"mayer:{term.name}", "objective", 1, fn)

    def duration_block(self) -> NlpBlock:
        L = self.layout
        omega = self.ocp.duration_weight

        def fn(z):
            tf = self.grid(z)[3]
            g = np.zeros(L.size)
            if L.free_tf:
                g[L.tf_index] = -omega
            return -omega * tf, g

        return NlpBlock("mayer:duration", "objective", 1, fn)

    def defect_block(self) -> NlpBlock:
        L = self.layout
        K, nx, nu, npar = self.K, L.nx, L.nu, L.n_params
        dyn = self.ocp.dynamics
        kk = np.arange(K)
        eye = np.eye(nx)
        # index templates: rows (K, nx, nx) for state blocks, etc.
        r_state = (kk[:, None, None] * nx + np.arange(nx)[None, :, None]) + np.zeros((1, 1, nx), dtype=int)
        c_state_k = L.state_index(kk[:, None, None], np.arange(nx)[None, None, :]) + np.zeros((1, nx, 1), dtype=int)
        c_state_k1 = c_state_k + nx
        r_input = (kk[:, None, None] * nx + np.arange(nx)[None, :, None]) + np.zeros((1, 1, nu), dtype=int)
        c_input_k = L.input_index(kk[:, None, None], np.arange(nu)[None, None, :]) + np.zeros((1, nx, 1), dtype=int)
        c_input_k1 = c_input_k + nu
        r_par = (kk[:, None, None] * nx + np.arange(nx)[None, :, None]) + np.zeros((1, 1, npar), dtype=int)
        c_par = L.param_index(np.arange(npar))[None, None, :] + np.zeros((K, nx, 1), dtype=int)

        def fn(z):
            X, U, p, tf, t = self.grid(z)
            span = tf - L.t0
            hstep = span / K
            f, fX, fU, fP, fT = _point_partials(dyn(X, U, p, t), self.P, nx, nx, nu, npar)
            c = X[1:] - X[:-1] - 0.5 * hstep * (f[:-1] + f[1:])
            data = [
                (-eye - 0.5 * hstep * fX[:-1]).ravel(),
                (eye - 0.5 * hstep * fX[1:]).ravel(),
            ]
            rows = [r_state.ravel(), r_state.ravel()]
            cols = [c_state_k.ravel(), c_state_k1.ravel()]
            if nu:
                data += [(-0.5 * hstep * fU[:-1]).ravel(), (-0.5 * hstep * fU[1:]).ravel()]
                rows += [r_input.ravel(), r_input.ravel()]
                cols += [c_input_k.ravel(), c_input_k1.ravel()]
            if npar:
                data.append((-0.5 * hstep * (fP[:-1] + fP[1:])).ravel())
                rows.append(r_par.ravel())
                cols.append(c_par.ravel())
            if L.free_tf:
                dtf = -0.5 / K * (f[:-1] + f[1:]) - 0.5 * hstep * (
                    fT[:-1] * self.tau[:-1, None] + fT[1:] * self.tau[1:, None]
                )
                data.append(dtf.ravel())
                rows.append(np.arange(K * nx))
                cols.append(np.full(K * nx, L.tf_index))
            J = sp.coo_matrix(
                (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                shape=(K * nx, L.size),
            ).tocsr()
            return c.ravel(), J

        return NlpBlock("defects", "eq", K * nx, fn)

    def path_block(self, con) -> NlpBlock:
        L = self.layout
        c = con.out_dim

        def fn(z):
            X, U, p, tf, t = self.grid(z)
            val, dX, dU, dP, dT = _point_partials(con(X, U, p, t), self.P, c, L.nx, L.nu, L.n_params)
            return val.ravel(), self._point_jacobian(dX, dU, dP, dT)

        return NlpBlock(f"path:{con.name}", "ineq", self.P * c, fn)

    def boundary_block(self, bc) -> NlpBlock:
        fnc = bc.function

        def fn(z):
            val, J = self._boundary_pieces(z, fnc)
            return val, sp.csr_matrix(J)

        return NlpBlock(f"boundary:{fnc.name}", bc.kind, fnc.out_dim, fn)

    def _build(self) -> NlpProblem:
        ocp, L = self.ocp, self.layout
        blocks = [self.lagrange_block(t) for t in ocp.lagrange_terms]
        blocks += [self.mayer_block(t) for t in ocp.mayer_terms]
        if ocp.duration_weight > 0:
            blocks.append(self.duration_block())
        blocks.append(self.defect_block())
        blocks += [self.path_block(c) for c in ocp.path_constraints]
        blocks += [self.boundary_block(bc) for bc in ocp.boundary_constraints]
        lower = L.join(
            np.tile(ocp.state_bounds.lower, (self.P, 1)),
            np.tile(ocp.input_bounds.lower, (self.P, 1)),
            ocp.param_bounds.lower,
            ocp.horizon.tf_lower if L.free_tf else None,
        )
        upper = L.join(
            np.tile(ocp.state_bounds.upper, (self.P, 1)),
            np.tile(ocp.input_bounds.upper, (self.P, 1)),
            ocp.param_bounds.upper,
            ocp.horizon.tf_upper if L.free_tf else None,
        )
        return NlpProblem(
            L.size, blocks, lower, upper, layout=L, meta={"transcription": self}, hessian_pattern=self.hessian_pattern()
        )

    def point_variables(self):
        """Decision indices of the states and inputs at each grid point."""
        L = self.layout
        return [np.concatenate([L.state_index(k, np.arange(L.nx)), L.input_index(k, np.arange(L.nu))]) for k in range(self.P)]

    def global_variables(self):
        L = self.layout
        out = [L.param_index(j) for j in range(L.n_params)]
        if L.tf_index is not None:
            out.append(L.tf_index)
        return np.asarray(out, dtype=int)

    def _boundary_couples_ends(self) -> bool:
        """Whether any boundary row depends on both the first and the last grid point.

        Probed at two deterministic points; separable rows (pins on the
        initial or final state, terminal rewards) need no coupled block.
        """
        ocp = self.ocp
        fns = list(ocp.mayer_terms) + [bc.function for bc in ocp.boundary_constraints]
        if not fns:
            return False
        X, U, p, t = ocp._probe_point()
        probes = [(X[0], U[0]), (X[0] + 0.37 * (1.0 + np.abs(X[0])), U[0] + 0.29 * (1.0 + np.abs(U[0])))]
        tf = float(t[1])
        for fnc in fns:
            for x, u in probes:
                ev = fnc(float(t[0]), tf, x, 1.1 * x + 0.13, u, 0.9 * u - 0.07, p)
                c = fnc.out_dim
                start = np.abs(_z(ev.d_x0, (c, ocp.nx))).sum(axis=1) + np.abs(_z(ev.d_u0, (c, ocp.nu))).sum(axis=1)
                end = np.abs(_z(ev.d_xf, (c, ocp.nx))).sum(axis=1) + np.abs(_z(ev.d_uf, (c, ocp.nu))).sum(axis=1)
                if np.any((start > 0) & (end > 0)):
                    return True
        return False

    def hessian_pattern(self, extra_point_vars=None, n=None):
        groups = self.point_variables()
        if extra_point_vars is not None:
            groups = [np.concatenate([g, e]) for g, e in zip(groups, extra_point_vars)]
        coupled = np.concatenate([groups[0], groups[-1]]) if self._boundary_couples_ends() else ()
        return block_hessian_pattern(n or self.layout.size, groups, self.global_variables(), coupled)

    def encode(self, traj: Trajectory) -> np.ndarray:
        return encode(traj, self.layout)

    def decode(self, z) -> Trajectory:
        return decode(z, self.layout)


def transcribe(ocp: OcpSpec, mesh: Mesh) -> NlpProblem:
    """Trapezoidal direct collocation of ``ocp`` on ``mesh``."""
    return Transcription(ocp, mesh).nlp


def encode(traj: Trajectory, layout: Layout) -> np.ndarray:
    times = np.asarray(traj.times, dtype=float)
    if times.size != layout.points:
        raise ValueError(f"trajectory has {times.size} points, layout expects {layout.points}")
    return layout.join(traj.states, traj.inputs, traj.params, times[-1] if layout.free_tf else None)


def decode(z, layout: Layout) -> Trajectory:
    """Inverse of the decision-vector layout; recovers ``tf`` for free horizons."""
    z = np.asarray(z, dtype=float)
    if z.shape != (layout.size,):
        raise ValueError(f"decision vector has length {z.size}, expected {layout.size}")
    X, U, p, tf = layout.split(z)
    return Trajectory(times=layout.times(tf), states=X.copy(), inputs=U.copy(), params=p.copy())
