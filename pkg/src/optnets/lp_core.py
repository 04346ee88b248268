"""Dense LP/QP representation and desk-scale solving with KKT certification.

Conventions used throughout:

  LP:  min  cost @ z
       s.t. ineq_lhs @ z <= ineq_rhs
            eq_lhs   @ z == eq_rhs
            lower <= z <= upper          (elementwise, optional)

  QP adds the strictly convex term  0.5 * z @ quadratic @ z.

The LP path is a bounded-variable primal simplex with Bland's anti-cycling
rule.  When the optimal face is not a singleton the lexicographically
smallest optimal basic solution is returned, so repeated solves of the same
problem are reproducible.  The QP path is a primal active-set method and
requires the quadratic term to be positive definite.

Problem objects are immutable after construction; solve calls allocate
private workspaces and are safe to run concurrently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    NotPositiveDefinite,
    NumericalFailure,
    ParseError,
)

__all__ = [
    "Status",
    "SolverOptions",
    "DEFAULT_OPTIONS",
    "LinearProgram",
    "QuadraticProgram",
    "SolveResult",
    "KKTReport",
    "solve_lp",
    "solve_qp",
    "check_kkt",
    "AffineCoeff",
    "BilinearTerm",
    "BilinearConstraintTemplate",
    "DppReport",
    "validate_dpp",
    "program_to_json",
    "program_from_json",
]


class Status(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class SolverOptions:
    """Numeric tolerances; every field is overridable per call."""

    feas_tol: float = 1e-9
    active_tol: float = 1e-7
    kkt_tol: float = 1e-8
    definiteness_tol: float = 1e-10
    rank_tol: float = 1e-10
    pivot_tol: float = 1e-11
    dual_tol: float = 1e-9
    iter_factor: int = 50

    def max_pivots(self, n_z: int, m1: int, m2: int) -> int:
        return max(self.iter_factor * (n_z + m1 + m2), self.iter_factor)


DEFAULT_OPTIONS = SolverOptions()


def _as_vector(x, length=None, name="vector") -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1:
        raise DimensionMismatch(f"{name} must be one-dimensional, got shape {v.shape}")
    if length is not None and v.shape[0] != length:
        raise DimensionMismatch(f"{name} must have length {length}, got {v.shape[0]}")
    return v


def _as_matrix(a, cols, name="matrix") -> np.ndarray:
    m = np.asarray(a, dtype=float)
    if m.size == 0:
        return np.zeros((0, cols))
    m = np.atleast_2d(m)
    if m.ndim != 2 or m.shape[1] != cols:
        raise DimensionMismatch(f"{name} must have {cols} columns, got shape {m.shape}")
    return m


@dataclass(frozen=True)
class LinearProgram:
    """A dense LP.  Empty constraint blocks may be omitted."""

    cost: np.ndarray
    ineq_lhs: np.ndarray = field(default=None)
    ineq_rhs: np.ndarray = field(default=None)
    eq_lhs: np.ndarray = field(default=None)
    eq_rhs: np.ndarray = field(default=None)
    lower: np.ndarray = field(default=None)
    upper: np.ndarray = field(default=None)

    def __post_init__(self):
        cost = _as_vector(self.cost, name="cost")
        n = cost.shape[0]
        A1 = _as_matrix(self.ineq_lhs if self.ineq_lhs is not None else [], n, "ineq_lhs")
        b1 = _as_vector(self.ineq_rhs if self.ineq_rhs is not None else [], A1.shape[0], "ineq_rhs")
        A2 = _as_matrix(self.eq_lhs if self.eq_lhs is not None else [], n, "eq_lhs")
        b2 = _as_vector(self.eq_rhs if self.eq_rhs is not None else [], A2.shape[0], "eq_rhs")
        lo = np.full(n, -np.inf) if self.lower is None else _as_vector(self.lower, n, "lower")
        hi = np.full(n, np.inf) if self.upper is None else _as_vector(self.upper, n, "upper")
        if np.any(lo > hi):
            raise DimensionMismatch("lower bound exceeds upper bound")
        for attr, val in (
            ("cost", cost), ("ineq_lhs", A1), ("ineq_rhs", b1),
            ("eq_lhs", A2), ("eq_rhs", b2), ("lower", lo), ("upper", hi),
        ):
            val.setflags(write=False)
            object.__setattr__(self, attr, val)

    @property
    def n_z(self) -> int:
        return self.cost.shape[0]

    @property
    def m1(self) -> int:
        return self.ineq_lhs.shape[0]

    @property
    def m2(self) -> int:
        return self.eq_lhs.shape[0]

    @property
    def constraint_count(self) -> int:
        """Rows plus finite bounds, the convention used for c-widths."""
        return int(self.m1 + self.m2 + np.isfinite(self.lower).sum() + np.isfinite(self.upper).sum())


@dataclass(frozen=True, kw_only=True)
class QuadraticProgram(LinearProgram):
    """LP data plus a symmetric quadratic term 0.5 * z @ quadratic @ z."""

    quadratic: np.ndarray = None

    def __post_init__(self):
        super().__post_init__()
        n = self.n_z
        Q = _as_matrix(self.quadratic if self.quadratic is not None else np.zeros((n, n)), n, "quadratic")
        if Q.shape[0] != n:
            raise DimensionMismatch(f"quadratic must be {n}x{n}, got {Q.shape}")
        if not np.allclose(Q, Q.T, atol=1e-12, rtol=0):
            raise DimensionMismatch("quadratic matrix must be symmetric")
        Q.setflags(write=False)
        object.__setattr__(self, "quadratic", Q)

    def min_eigenvalue(self) -> float:
        if self.n_z == 0:
            return np.inf
        return float(np.linalg.eigvalsh(self.quadratic).min())


@dataclass(frozen=True)
class SolveResult:
    status: Status
    primal: np.ndarray = None
    duals: np.ndarray = None           # inequality duals then equality duals
    active_set: tuple = ()             # indices over inequality rows
    objective: float = np.nan
    iterations: int = 0

    @property
    def ineq_duals(self):
        return self.duals

    def is_optimal(self) -> bool:
        return self.status is Status.OPTIMAL


# ---------------------------------------------------------------------------
# Bounded-variable primal simplex
# ---------------------------------------------------------------------------

_AT_LOWER, _AT_UPPER, _FREE, _BASIC = 0, 1, 2, 3


class _Simplex:
    """One solve on the equality form  A v = b,  lo <= v <= hi.

    Columns are structural variables first, then slacks, then one artificial
    per row.  Bland's rule everywhere, so termination is guaranteed despite
    degeneracy.
    """

    def __init__(self, A, b, lo, hi, opts, max_iter):
        self.A = A
        self.b = b
        self.lo = lo
        self.hi = hi
        self.opts = opts
        self.max_iter = max_iter
        self.m, self.n = A.shape
        self.state = np.full(self.n, _AT_LOWER, dtype=np.int8)
        self.values = np.zeros(self.n)
        self.basis = np.full(self.m, -1, dtype=int)
        self.iterations = 0

    def set_nonbasic_start(self, j, value, state):
        self.values[j] = value
        self.state[j] = state

    def make_basic(self, row, j):
        self.basis[row] = j
        self.state[j] = _BASIC

    def _basis_matrix(self):
        return self.A[:, self.basis]

    def refresh_basic_values(self):
        nb_mask = self.state != _BASIC
        rhs = self.b - self.A[:, nb_mask] @ self.values[nb_mask]
        try:
            xb = np.linalg.solve(self._basis_matrix(), rhs)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure("singular basis matrix") from exc
        self.values[self.basis] = xb

    def run(self, cost):
        """Price-and-pivot until optimal or unbounded under the given cost."""
        opts = self.opts
        while True:
            if self.iterations >= self.max_iter:
                raise NumericalFailure(
                    f"pivot budget of {self.max_iter} exhausted (possible stall)")
            B = self._basis_matrix()
            try:
                y = np.linalg.solve(B.T, cost[self.basis])
            except np.linalg.LinAlgError as exc:
                raise NumericalFailure("singular basis matrix") from exc
            nb = np.flatnonzero(self.state != _BASIC)
            if nb.size == 0:
                return "optimal", y
            rc = cost[nb] - self.A[:, nb].T @ y
            enter = -1
            direction = 0.0
            for idx, j in enumerate(nb):   # Bland: first eligible index
                if self.lo[j] == self.hi[j]:
                    continue
                st = self.state[j]
                if rc[idx] < -opts.dual_tol and st in (_AT_LOWER, _FREE):
                    enter, direction = j, 1.0
                    break
                if rc[idx] > opts.dual_tol and st in (_AT_UPPER, _FREE):
                    enter, direction = j, -1.0
                    break
            if enter < 0:
                return "optimal", y
            self.iterations += 1
            d_b = np.linalg.solve(B, self.A[:, enter]) * (-direction)
            # step limits: entering variable's own range, then each basic's bound
            limit = self.hi[enter] - self.lo[enter] if np.isfinite(self.hi[enter]) and np.isfinite(self.lo[enter]) else np.inf
            if self.state[enter] == _FREE:
                limit = np.inf
            leave_row = -1
            vb = self.values[self.basis]
            for row in range(self.m):
                dj = d_b[row]
                if abs(dj) <= opts.pivot_tol:
                    continue
                jb = self.basis[row]
                bound = self.hi[jb] if dj > 0 else self.lo[jb]
                if not np.isfinite(bound):
                    continue
                step = (bound - vb[row]) / dj
                step = max(step, 0.0)
                if step < limit - 1e-15:
                    limit = step
                    leave_row = row
                elif step <= limit + 1e-15 and leave_row >= 0:
                    if self.basis[row] < self.basis[leave_row]:   # Bland tie-break
                        leave_row = row
            if not np.isfinite(limit):
                return "unbounded", y
            step = limit * direction
            self.values[enter] += step
            self.values[self.basis] += d_b * limit
            if leave_row < 0:
                # bound-to-bound flip of the entering variable
                self.state[enter] = _AT_UPPER if direction > 0 else _AT_LOWER
                continue
            jb = self.basis[leave_row]
            dj = d_b[leave_row]
            self.state[jb] = _AT_UPPER if dj > 0 else _AT_LOWER
            self.values[jb] = self.hi[jb] if dj > 0 else self.lo[jb]
            self.make_basic(leave_row, enter)

    def has_alternate_optima(self, cost):
        """True when a movable nonbasic column prices out to zero."""
        B = self._basis_matrix()
        y = np.linalg.solve(B.T, cost[self.basis])
        for j in np.flatnonzero(self.state != _BASIC):
            if self.lo[j] == self.hi[j]:
                continue
            rc = cost[j] - self.A[:, j] @ y
            if abs(rc) <= self.opts.dual_tol:
                return True
        return False


def _solve_bounded_lp(cost, A1, b1, A2, b2, lo, hi, opts, *, want_duals=True,
                      tie_break=True):
    """Two-phase bounded simplex.  Returns (status, z, y, iterations).

    y holds the row multipliers of the final basis (inequality rows first);
    KKT duals are lambda = -y[:m1], mu = -y[m1:].
    """
    m1, m2 = A1.shape[0], A2.shape[0]
    n = cost.shape[0]
    m = m1 + m2
    if m == 0:
        # pure bound-constrained linear objective
        z = np.where(cost > 0, lo, np.where(cost < 0, hi, 0.0))
        z = np.where(cost == 0, np.clip(0.0, lo, hi), z)
        if not np.all(np.isfinite(z)):
            return Status.UNBOUNDED, None, None, 0
        return Status.OPTIMAL, z, np.zeros(0), 0

    A_rows = np.vstack([A1, A2]) if m else np.zeros((0, n))
    rhs = np.concatenate([b1, b2])
    # columns: structural | slacks (ineq rows) | artificials (one per row)
    A = np.zeros((m, n + m1 + m))
    A[:, :n] = A_rows
    A[:m1, n:n + m1] = np.eye(m1)
    full_lo = np.concatenate([lo, np.zeros(m1), np.zeros(m)])
    full_hi = np.concatenate([hi, np.full(m1, np.inf), np.full(m, np.inf)])

    max_iter = opts.max_pivots(n, m1, m2)
    sx = _Simplex(A, rhs, full_lo, full_hi, opts, max_iter)

    # nonbasic structural variables start at a finite bound; truly free ones at 0
    z0 = np.zeros(n)
    for j in range(n):
        if np.isfinite(lo[j]):
            z0[j] = lo[j]
            sx.set_nonbasic_start(j, lo[j], _AT_LOWER)
        elif np.isfinite(hi[j]):
            z0[j] = hi[j]
            sx.set_nonbasic_start(j, hi[j], _AT_UPPER)
        else:
            sx.set_nonbasic_start(j, 0.0, _FREE)
    resid = rhs - A_rows @ z0
    art_used = []
    for i in range(m):
        art = n + m1 + i
        if i < m1 and resid[i] >= 0:
            # slack can start basic and feasible
            sx.set_nonbasic_start(art, 0.0, _AT_LOWER)
            sx.make_basic(i, n + i)
            sx.values[n + i] = resid[i]
        else:
            A[i, art] = 1.0 if resid[i] >= 0 else -1.0
            sx.make_basic(i, art)
            sx.values[art] = abs(resid[i])
            art_used.append(art)
            if i < m1:
                sx.set_nonbasic_start(n + i, 0.0, _AT_LOWER)

    phase1_cost = np.zeros(A.shape[1])
    phase1_cost[n + m1:] = 1.0
    status, _ = sx.run(phase1_cost)
    infeas = float(sx.values[n + m1:].sum())
    if infeas > opts.feas_tol * (1.0 + np.abs(rhs).sum()):
        return Status.INFEASIBLE, None, None, sx.iterations

    # pin artificials at zero; pivot basic ones out where the row permits
    sx.lo[n + m1:] = 0.0
    sx.hi[n + m1:] = 0.0
    for row in range(m):
        j = sx.basis[row]
        if j < n + m1:
            continue
        B = sx._basis_matrix()
        ek = np.zeros(m)
        ek[row] = 1.0
        w = np.linalg.solve(B.T, ek)
        replaced = False
        for cand in range(n + m1):
            if sx.state[cand] == _BASIC or sx.lo[cand] == sx.hi[cand]:
                continue
            if abs(w @ A[:, cand]) > 1e-8:
                sx.state[j] = _AT_LOWER
                sx.values[j] = 0.0
                sx.make_basic(row, cand)
                sx.refresh_basic_values()
                replaced = True
                break
        if not replaced:
            pass  # redundant row: artificial stays basic, pinned at zero

    phase2_cost = np.zeros(A.shape[1])
    phase2_cost[:n] = cost
    status, y = sx.run(phase2_cost)
    if status == "unbounded":
        return Status.UNBOUNDED, None, None, sx.iterations
    z = sx.values[:n].copy()

    if tie_break and sx.has_alternate_optima(phase2_cost):
        refined = _lexicographic_refine(cost, A1, b1, A2, b2, lo, hi, z, opts)
        if refined is not None:
            z = refined

    return Status.OPTIMAL, z, (y if want_duals else None), sx.iterations


def _lexicographic_refine(cost, A1, b1, A2, b2, lo, hi, z_star, opts):
    """Minimize coordinates in order over the optimal face.

    The face is pinned with the equality cost @ z == cost @ z_star, which the
    incumbent satisfies exactly, so each refinement problem is feasible.
    Returns None when a refinement subproblem misbehaves (for example an
    unbounded zero-cost face); the caller keeps the unrefined point then.
    """
    n = cost.shape[0]
    v_star = float(cost @ z_star)
    A2_aug = np.vstack([A2, cost[None, :]])
    b2_aug = np.concatenate([b2, [v_star]])
    lo_w = lo.copy()
    hi_w = hi.copy()
    z = z_star.copy()
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        status, zi, _, _ = _solve_bounded_lp(
            e, A1, b1, A2_aug, b2_aug, lo_w, hi_w, opts,
            want_duals=False, tie_break=False)
        if status is not Status.OPTIMAL:
            return None
        z = zi
        lo_w[i] = hi_w[i] = zi[i]
    return z


def _active_rows(A1, b1, z, tol):
    if A1.shape[0] == 0:
        return ()
    slack = b1 - A1 @ z
    return tuple(int(i) for i in np.flatnonzero(np.abs(slack) <= tol))


def solve_lp(lp: LinearProgram, options: SolverOptions = None) -> SolveResult:
    """Solve an LP; on Status.OPTIMAL the result is KKT-certifiable.

    Raises NumericalFailure if the pivot budget is exhausted.  Infeasible and
    unbounded instances are reported through the result status.
    """
    opts = options or DEFAULT_OPTIONS
    status, z, y, iters = _solve_bounded_lp(
        lp.cost, lp.ineq_lhs, lp.ineq_rhs, lp.eq_lhs, lp.eq_rhs,
        lp.lower, lp.upper, opts)
    if status is not Status.OPTIMAL:
        return SolveResult(status=status, iterations=iters)
    m1 = lp.m1
    duals = -y[:m1 + lp.m2] if y is not None and y.size else np.zeros(m1 + lp.m2)
    # tiny negative inequality multipliers are roundoff; clip within kkt_tol
    duals = duals.copy()
    duals[:m1] = np.where(np.abs(duals[:m1]) <= opts.kkt_tol, np.maximum(duals[:m1], 0.0), duals[:m1])
    return SolveResult(
        status=Status.OPTIMAL,
        primal=z,
        duals=duals,
        active_set=_active_rows(lp.ineq_lhs, lp.ineq_rhs, z, opts.active_tol),
        objective=float(lp.cost @ z),
        iterations=iters,
    )


# ---------------------------------------------------------------------------
# Primal active-set QP
# ---------------------------------------------------------------------------

def _fold_bounds(A1, b1, lo, hi):
    """Append finite bounds as inequality rows; returns (A, b, n_original_rows)."""
    n = lo.shape[0]
    rows = [A1]
    rhs = [b1]
    for j in range(n):
        if np.isfinite(hi[j]):
            r = np.zeros(n)
            r[j] = 1.0
            rows.append(r[None, :])
            rhs.append([hi[j]])
        if np.isfinite(lo[j]):
            r = np.zeros(n)
            r[j] = -1.0
            rows.append(r[None, :])
            rhs.append([-lo[j]])
    return np.vstack(rows), np.concatenate([np.asarray(r, dtype=float) for r in rhs]), A1.shape[0]


def _qp_feasible_start(qp, opts):
    """Phase-1 LP: minimize total inequality violation subject to equalities."""
    n = qp.n_z
    m1 = qp.m1
    cost = np.concatenate([np.zeros(n), np.ones(m1)])
    A1 = np.hstack([qp.ineq_lhs, -np.eye(m1)]) if m1 else np.zeros((0, n + m1))
    A2 = np.hstack([qp.eq_lhs, np.zeros((qp.m2, m1))]) if qp.m2 else np.zeros((0, n + m1))
    lo = np.concatenate([qp.lower, np.zeros(m1)])
    hi = np.concatenate([qp.upper, np.full(m1, np.inf)])
    status, v, _, iters = _solve_bounded_lp(cost, A1, qp.ineq_rhs, A2, qp.eq_rhs, lo, hi, opts)
    if status is not Status.OPTIMAL:
        return None, iters
    if float(v[n:].sum()) > opts.feas_tol * (1.0 + np.abs(qp.ineq_rhs).sum()):
        return None, iters
    return v[:n], iters


def solve_qp(qp: QuadraticProgram, options: SolverOptions = None) -> SolveResult:
    """Solve a strictly convex QP by the primal active-set method.

    Raises NotPositiveDefinite when the quadratic term fails the
    definiteness tolerance.  The minimizer is unique, so no tie-break is
    involved.
    """
    opts = options or DEFAULT_OPTIONS
    n = qp.n_z
    if qp.min_eigenvalue() <= opts.definiteness_tol:
        raise NotPositiveDefinite(
            f"minimum eigenvalue {qp.min_eigenvalue():.3e} is below the tolerance")
    Q = qp.quadratic
    c = qp.cost
    A, b, m_orig = _fold_bounds(qp.ineq_lhs, qp.ineq_rhs, qp.lower, qp.upper)
    E, e = qp.eq_lhs, qp.eq_rhs
    m = A.shape[0]

    if m == 0 and E.shape[0] == 0:
        z = np.linalg.solve(Q, -c)
        return SolveResult(Status.OPTIMAL, z, np.zeros(0), (), float(0.5 * z @ Q @ z + c @ z), 0)

    z, iters0 = _qp_feasible_start(qp, opts)
    if z is None:
        return SolveResult(status=Status.INFEASIBLE, iterations=iters0)

    max_iter = opts.max_pivots(n, m, E.shape[0])
    working = []
    slack = b - A @ z if m else np.zeros(0)
    for i in np.flatnonzero(slack <= opts.active_tol):
        cand = working + [int(i)]
        G = np.vstack([E, A[cand]]) if E.size else A[cand]
        if np.linalg.matrix_rank(G, tol=opts.rank_tol) == G.shape[0] and len(cand) + E.shape[0] <= n:
            working.append(int(i))

    lam_full = np.zeros(m)
    mu = np.zeros(E.shape[0])
    iterations = iters0
    while True:
        if iterations >= max_iter + iters0:
            raise NumericalFailure("active-set iteration budget exhausted")
        iterations += 1
        g = Q @ z + c
        Gw = np.vstack([E, A[working]]) if (E.shape[0] or working) else np.zeros((0, n))
        k = Gw.shape[0]
        KKT = np.zeros((n + k, n + k))
        KKT[:n, :n] = Q
        if k:
            KKT[:n, n:] = Gw.T
            KKT[n:, :n] = Gw
        rhs = np.concatenate([-g, np.zeros(k)])
        sol = np.linalg.solve(KKT, rhs)
        p = sol[:n]
        lams = sol[n:]
        if np.abs(p).max(initial=0.0) <= 1e-11:
            lam_w = lams[E.shape[0]:]
            if lam_w.size == 0 or lam_w.min() >= -opts.dual_tol:
                mu = lams[:E.shape[0]]
                lam_full = np.zeros(m)
                lam_full[working] = np.maximum(lam_w, 0.0)
                break
            worst = int(np.argmin(lam_w))
            del working[worst]
            continue
        # step to the nearest blocking constraint outside the working set
        alpha = 1.0
        block = -1
        for i in range(m):
            if i in working:
                continue
            ai_p = A[i] @ p
            if ai_p > opts.pivot_tol:
                step = (b[i] - A[i] @ z) / ai_p
                if step < alpha - 1e-15:
                    alpha = max(step, 0.0)
                    block = i
                elif step <= alpha + 1e-15 and block >= 0 and i < block:
                    block = i
        z = z + alpha * p
        if block >= 0:
            cand = working + [block]
            G = np.vstack([E, A[cand]]) if E.size else A[cand]
            if np.linalg.matrix_rank(G, tol=opts.rank_tol) == G.shape[0]:
                working.append(block)

    duals = np.concatenate([lam_full[:m_orig], mu])
    return SolveResult(
        status=Status.OPTIMAL,
        primal=z,
        duals=duals,
        active_set=_active_rows(qp.ineq_lhs, qp.ineq_rhs, z, opts.active_tol),
        objective=float(0.5 * z @ Q @ z + c @ z),
        iterations=iterations,
    )


# ---------------------------------------------------------------------------
# KKT certification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KKTReport:
    stationarity: float
    primal_feasibility: float
    complementarity: float
    dual_feasibility: float
    tol: float

    @property
    def passed(self) -> bool:
        return max(self.stationarity, self.primal_feasibility,
                   self.complementarity, self.dual_feasibility) <= self.tol

    def worst(self) -> float:
        return max(self.stationarity, self.primal_feasibility,
                   self.complementarity, self.dual_feasibility)


def check_kkt(problem: LinearProgram, result: SolveResult, tol: float = None,
              options: SolverOptions = None) -> KKTReport:
    """Report stationarity, feasibility and complementarity residuals.

    Bound multipliers are not stored on the result; stationarity is instead
    checked in projected form, i.e. the reduced cost at a variable must
    vanish when the variable is strictly interior and must have the sign of
    the binding bound otherwise.
    """
    opts = options or DEFAULT_OPTIONS
    tol = opts.kkt_tol if tol is None else tol
    if not result.is_optimal():
        raise ValueError("check_kkt expects an Optimal result")
    z = result.primal
    lam = result.duals[:problem.m1]
    mu = result.duals[problem.m1:]
    grad = problem.cost.copy()
    if isinstance(problem, QuadraticProgram):
        grad = grad + problem.quadratic @ z
    r = grad
    if problem.m1:
        r = r + problem.ineq_lhs.T @ lam
    if problem.m2:
        r = r + problem.eq_lhs.T @ mu
    band = opts.active_tol
    stat = 0.0
    for j in range(problem.n_z):
        at_lo = np.isfinite(problem.lower[j]) and z[j] <= problem.lower[j] + band
        at_hi = np.isfinite(problem.upper[j]) and z[j] >= problem.upper[j] - band
        if at_lo and at_hi:
            continue  # fixed variable absorbs any reduced cost
        if at_lo:
            stat = max(stat, -r[j])   # multiplier at a lower bound must be >= 0
        elif at_hi:
            stat = max(stat, r[j])
        else:
            stat = max(stat, abs(r[j]))
    feas = 0.0
    comp = 0.0
    if problem.m1:
        slack = problem.ineq_rhs - problem.ineq_lhs @ z
        feas = max(feas, float(np.maximum(-slack, 0.0).max(initial=0.0)))
        comp = float(np.abs(lam * slack).max(initial=0.0))
    if problem.m2:
        feas = max(feas, float(np.abs(problem.eq_lhs @ z - problem.eq_rhs).max(initial=0.0)))
    feas = max(feas, float(np.maximum(problem.lower - z, 0.0).max(initial=0.0)))
    feas = max(feas, float(np.maximum(z - problem.upper, 0.0).max(initial=0.0)))
    dual = float(np.maximum(-lam, 0.0).max(initial=0.0)) if problem.m1 else 0.0
    return KKTReport(stationarity=float(max(stat, 0.0)), primal_feasibility=feas,
                     complementarity=comp, dual_feasibility=dual, tol=tol)


# ---------------------------------------------------------------------------
# Restricted bilinear constraint grammar
# ---------------------------------------------------------------------------

CONST_FACTOR = "1"


@dataclass(frozen=True)
class AffineCoeff:
    """An expression  constant + sum(linear[name] * name)  over named symbols."""

    constant: float = 0.0
    linear: tuple = ()   # tuple of (symbol, weight) pairs

    @staticmethod
    def of(constant=0.0, **linear) -> "AffineCoeff":
        return AffineCoeff(constant=float(constant),
                           linear=tuple(sorted(linear.items())))

    def symbols(self):
        return tuple(name for name, _ in self.linear)


@dataclass(frozen=True)
class BilinearTerm:
    """coefficient * factor, where factor is one variable atom or the constant 1."""

    coeff: AffineCoeff
    factor: str = CONST_FACTOR


@dataclass(frozen=True)
class BilinearConstraintTemplate:
    terms: tuple
    relation: str = "<="      # one of "<=", "=", ">="
    rhs: AffineCoeff = AffineCoeff()

    def __post_init__(self):
        if self.relation not in ("<=", "=", ">="):
            raise ParseError(f"unknown relation {self.relation!r}")
        object.__setattr__(self, "terms", tuple(self.terms))


@dataclass(frozen=True)
class DppReport:
    compliant: bool
    violations: tuple


def _check_template(tpl, parameters, variables, where, found):
    for term in tpl.terms:
        coeff_syms = term.coeff.symbols()
        bad = [s for s in coeff_syms if s in variables]
        if bad:
            found.add(f"{where}: coefficient involves variable(s) {sorted(bad)}")
        if term.factor in parameters:
            found.add(f"{where}: factor {term.factor!r} is parametrized")
        var_hits = [v for v in variables if v == term.factor]
        if len(coeff_syms) > 0 and term.factor != CONST_FACTOR and term.factor not in variables \
                and term.factor not in parameters:
            # parameter-free compound atom such as "norm2(z)": allowed
            pass
        del var_hits
    for s in tpl.rhs.symbols():
        if s in variables:
            found.add(f"{where}: right-hand side involves variable {s!r}")


def validate_dpp(templates: Sequence[BilinearConstraintTemplate],
                 objective: BilinearConstraintTemplate = None,
                 parameters: Sequence[str] = (),
                 variables: Sequence[str] = ()) -> DppReport:
    """Check the restricted grammar: every product pairs a parameter-affine
    coefficient with a parameter-free factor.

    The verdict is order-independent over the template and term lists;
    violations come back sorted.
    """
    params = frozenset(parameters)
    varset = frozenset(variables)
    found = set()
    for idx, tpl in enumerate(templates):
        _check_template(tpl, params, varset, f"constraint[{idx}]", found)
    if objective is not None:
        _check_template(objective, params, varset, "objective", found)
    violations = tuple(sorted(found))
    return DppReport(compliant=not violations, violations=violations)


# ---------------------------------------------------------------------------
# Plain-text problem format
# ---------------------------------------------------------------------------

def program_to_json(problem: LinearProgram) -> str:
    """Serialize to the self-describing JSON document format."""
    doc = {
        "cost": problem.cost.tolist(),
        "ineq_lhs": problem.ineq_lhs.tolist(),
        "ineq_rhs": problem.ineq_rhs.tolist(),
        "eq_lhs": problem.eq_lhs.tolist(),
        "eq_rhs": problem.eq_rhs.tolist(),
        "bounds": {
            "lower": [None if not np.isfinite(v) else v for v in problem.lower],
            "upper": [None if not np.isfinite(v) else v for v in problem.upper],
        },
    }
    if isinstance(problem, QuadraticProgram):
        doc["quadratic"] = problem.quadratic.tolist()
    return json.dumps(doc, indent=2)


def program_from_json(text: str) -> LinearProgram:
    """Parse the JSON problem document; raises ParseError on malformed input."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "cost" not in doc:
        raise ParseError("problem document must be an object with a 'cost' key")
    try:
        cost = np.asarray(doc["cost"], dtype=float)
        n = cost.shape[0]
        bounds = doc.get("bounds") or {}
        lower = bounds.get("lower")
        upper = bounds.get("upper")
        kwargs = dict(
            cost=cost,
            ineq_lhs=doc.get("ineq_lhs") or np.zeros((0, n)),
            ineq_rhs=doc.get("ineq_rhs") or np.zeros(0),
            eq_lhs=doc.get("eq_lhs") or np.zeros((0, n)),
            eq_rhs=doc.get("eq_rhs") or np.zeros(0),
            lower=None if lower is None else np.asarray(
                [-np.inf if v is None else v for v in lower], dtype=float),
            upper=None if upper is None else np.asarray(
                [np.inf if v is None else v for v in upper], dtype=float),
        )
        if "quadratic" in doc:
            return QuadraticProgram(quadratic=np.asarray(doc["quadratic"], dtype=float), **kwargs)
        return LinearProgram(**kwargs)
    except (TypeError, ValueError, DimensionMismatch) as exc:
        raise ParseError(f"malformed problem document: {exc}") from exc
