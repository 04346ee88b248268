"""Multiparametric explicit solutions for parametric LPs and strictly convex
QPs: closed-form piecewise-affine laws per active set, critical-region
enumeration at a fixed parameter vector, condition numbers over active sets,
region counting, and covering-number bound formulas.

The parametric family is

    min  0.5 z @ A0 @ z + (U0x x + U0t theta + b0) @ z
    s.t. A1 z <= b1 + U1x x + U1t theta
         A2 z == b2 + U2x x + U2t theta

with A0 = 0 in LP mode and A0 positive definite in QP mode.  Rectangular
systems are resolved with Moore-Penrose pseudo-inverses at rank tolerance;
candidate active sets whose stacked matrix is rank deficient are flagged
rather than certified.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from itertools import combinations
from math import comb, log

import numpy as np

from .errors import DimensionMismatch, NoRegion, ScaleExceeded
from .lp_core import (
    DEFAULT_OPTIONS,
    LinearProgram,
    QuadraticProgram,
    SolverOptions,
    Status,
    solve_lp,
)

__all__ = [
    "ParamQPSpec",
    "ExplicitLaw",
    "CriticalRegion",
    "explicit_law",
    "enumerate_regions",
    "explicit_eval",
    "kappa",
    "count_regions",
    "covering_bound_pwa",
    "covering_bound_smooth",
    "regions_to_json",
    "regions_to_csv",
    "spec_to_json",
    "spec_from_json",
]

DESK_M1 = 12
DESK_NZ = 4
INTERIOR_TOL = 1e-7
DUAL_SCREEN_TOL = 1e-8


def _mat(a, rows, cols, name):
    m = np.asarray(a, dtype=float) if a is not None else np.zeros((rows, cols))
    if m.size == 0:
        m = np.zeros((rows, cols))
    m = np.atleast_2d(m)
    if m.shape != (rows, cols):
        raise DimensionMismatch(f"{name} must be {rows}x{cols}, got {m.shape}")
    return m


@dataclass(frozen=True)
class ParamQPSpec:
    """Parametric program data; kind is 'lp' (A0 = 0) or 'qp' (A0 > 0)."""

    n_z: int
    n_x: int
    n_theta: int
    kind: str = "lp"
    A0: np.ndarray = None
    U0x: np.ndarray = None
    U0t: np.ndarray = None
    b0: np.ndarray = None
    A1: np.ndarray = None
    b1: np.ndarray = None
    U1x: np.ndarray = None
    U1t: np.ndarray = None
    A2: np.ndarray = None
    b2: np.ndarray = None
    U2x: np.ndarray = None
    U2t: np.ndarray = None

    def __post_init__(self):
        n_z, n_x, n_t = self.n_z, self.n_x, self.n_theta
        if self.kind not in ("lp", "qp"):
            raise DimensionMismatch(f"unknown kind {self.kind!r}")

        def nrows(a):
            if a is None:
                return 0
            arr = np.asarray(a, dtype=float)
            return 0 if arr.size == 0 else np.atleast_2d(arr).shape[0]

        m1 = nrows(self.A1)
        m2 = nrows(self.A2)
        fields = {
            "A0": _mat(self.A0, n_z, n_z, "A0"),
            "U0x": _mat(self.U0x, n_z, n_x, "U0x"),
            "U0t": _mat(self.U0t, n_z, n_t, "U0t"),
            "b0": np.zeros(n_z) if self.b0 is None else np.asarray(self.b0, dtype=float).reshape(n_z),
            "A1": _mat(self.A1, m1, n_z, "A1"),
            "b1": np.zeros(m1) if self.b1 is None else np.asarray(self.b1, dtype=float).reshape(m1),
            "U1x": _mat(self.U1x, m1, n_x, "U1x"),
            "U1t": _mat(self.U1t, m1, n_t, "U1t"),
            "A2": _mat(self.A2, m2, n_z, "A2"),
            "b2": np.zeros(m2) if self.b2 is None else np.asarray(self.b2, dtype=float).reshape(m2),
            "U2x": _mat(self.U2x, m2, n_x, "U2x"),
            "U2t": _mat(self.U2t, m2, n_t, "U2t"),
        }
        if self.kind == "lp":
            if np.any(fields["A0"] != 0.0):
                raise DimensionMismatch("LP mode requires A0 to be exactly zero")
        else:
            A0 = fields["A0"]
            if not np.allclose(A0, A0.T, atol=1e-12, rtol=0):
                raise DimensionMismatch("A0 must be symmetric")
            if np.linalg.eigvalsh(A0).min() <= 1e-10:
                raise DimensionMismatch("QP mode requires A0 positive definite")
        if m1 + m2 < n_z:
            raise DimensionMismatch("standing assumption m1 + m2 >= n_z violated")
        for name, val in fields.items():
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def m1(self) -> int:
        return self.A1.shape[0]

    @property
    def m2(self) -> int:
        return self.A2.shape[0]

    def instantiate(self, x, theta) -> LinearProgram:
        """Numeric program at fixed inputs and parameters."""
        x = np.asarray(x, dtype=float).reshape(self.n_x)
        theta = np.asarray(theta, dtype=float).reshape(self.n_theta)
        cost = self.U0x @ x + self.U0t @ theta + self.b0
        kwargs = dict(
            cost=cost,
            ineq_lhs=self.A1,
            ineq_rhs=self.b1 + self.U1x @ x + self.U1t @ theta,
            eq_lhs=self.A2,
            eq_rhs=self.b2 + self.U2x @ x + self.U2t @ theta,
        )
        if self.kind == "qp":
            return QuadraticProgram(quadratic=self.A0, **kwargs)
        return LinearProgram(**kwargs)


@dataclass(frozen=True)
class ExplicitLaw:
    """Affine solution law z(x, theta) = A_tilde x + bias_t theta + bias_c
    for one candidate active set, with the matching inequality-dual law."""

    iota: tuple
    A_tilde: np.ndarray
    bias_theta: np.ndarray
    bias_const: np.ndarray
    lam_x: np.ndarray          # (|iota|, n_x)
    lam_theta: np.ndarray
    lam_const: np.ndarray
    rank_deficient: bool
    stationarity_defect: float  # LP only; 0 when duals can exist identically

    def solution(self, x, theta):
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        return self.A_tilde @ x + self.bias_theta @ theta + self.bias_const

    def ineq_duals(self, x, theta):
        if not self.iota:
            return np.zeros(0)
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        return self.lam_x @ x + self.lam_theta @ theta + self.lam_const


def _pinv(a, tol):
    return np.linalg.pinv(a, rcond=tol) if a.size else a.T.copy()


def explicit_law(spec: ParamQPSpec, iota, options: SolverOptions = None) -> ExplicitLaw:
    """Closed-form law for the active set iota.

    LP mode inverts the stacked active rows; QP mode eliminates the duals
    through the curvature matrix.  Either way the equality rows are always
    active.  Rank-deficient stacks fall back to the pseudo-inverse and are
    flagged.
    """
    opts = options or DEFAULT_OPTIONS
    iota = tuple(sorted(int(i) for i in iota))
    if any(i < 0 or i >= spec.m1 for i in iota):
        raise DimensionMismatch("active-set indices out of range")
    if len(iota) > spec.n_z - spec.m2:
        raise DimensionMismatch("active set larger than n_z - m2")
    k = len(iota)
    rows = list(iota)
    G = np.vstack([spec.A1[rows], spec.A2]) if (rows or spec.m2) else np.zeros((0, spec.n_z))
    Ux = np.vstack([spec.U1x[rows], spec.U2x]) if G.shape[0] else np.zeros((0, spec.n_x))
    Ut = np.vstack([spec.U1t[rows], spec.U2t]) if G.shape[0] else np.zeros((0, spec.n_theta))
    bG = np.concatenate([spec.b1[rows], spec.b2]) if G.shape[0] else np.zeros(0)
    rank = np.linalg.matrix_rank(G, tol=opts.rank_tol) if G.size else 0
    deficient = bool(G.shape[0] and rank < min(G.shape))

    if spec.kind == "lp":
        Gi = _pinv(G, opts.rank_tol)
        A_tilde = Gi @ Ux if G.shape[0] else np.zeros((spec.n_z, spec.n_x))
        bias_t = Gi @ Ut if G.shape[0] else np.zeros((spec.n_z, spec.n_theta))
        bias_c = Gi @ bG if G.shape[0] else np.zeros(spec.n_z)
        # duals solve G^T y = -cost(x, theta); defect measures the residual map
        Gt_i = _pinv(G.T, opts.rank_tol)
        y_x = -(Gt_i @ spec.U0x) if G.shape[0] else np.zeros((0, spec.n_x))
        y_t = -(Gt_i @ spec.U0t) if G.shape[0] else np.zeros((0, spec.n_theta))
        y_c = -(Gt_i @ spec.b0) if G.shape[0] else np.zeros(0)
        if G.shape[0]:
            R_x = spec.U0x + G.T @ y_x
            R_t = spec.U0t + G.T @ y_t
            R_c = spec.b0 + G.T @ y_c
        else:
            R_x, R_t, R_c = spec.U0x, spec.U0t, spec.b0
        defect = float(max(np.abs(R_x).max(initial=0.0), np.abs(R_t).max(initial=0.0),
                           np.abs(R_c).max(initial=0.0)))
        lam_x, lam_t, lam_c = y_x[:k], y_t[:k], y_c[:k]
    else:
        A0i = np.linalg.inv(spec.A0)
        if G.shape[0]:
            S = G @ A0i @ G.T
            W = _pinv(S, opts.rank_tol)
            M = A0i @ G.T @ W
            A_tilde = M @ (G @ A0i @ spec.U0x + Ux) - A0i @ spec.U0x
            bias_t = M @ (G @ A0i @ spec.U0t + Ut) - A0i @ spec.U0t
            bias_c = M @ (G @ A0i @ spec.b0 + bG) - A0i @ spec.b0
            lam_x = -(W @ (G @ A0i @ spec.U0x + Ux))[:k]
            lam_t = -(W @ (G @ A0i @ spec.U0t + Ut))[:k]
            lam_c = -(W @ (G @ A0i @ spec.b0 + bG))[:k]
        else:
            A_tilde = -A0i @ spec.U0x
            bias_t = -A0i @ spec.U0t
            bias_c = -A0i @ spec.b0
            lam_x = np.zeros((0, spec.n_x))
            lam_t = np.zeros((0, spec.n_theta))
            lam_c = np.zeros(0)
        defect = 0.0
    return ExplicitLaw(iota=iota, A_tilde=A_tilde, bias_theta=bias_t,
                       bias_const=bias_c, lam_x=lam_x, lam_theta=lam_t,
                       lam_const=lam_c, rank_deficient=deficient,
                       stationarity_defect=defect)


@dataclass
class CriticalRegion:
    """One retained active set with its affine law and region inequalities
    in x at the enumeration's fixed parameter vector."""

    iota: tuple
    law: ExplicitLaw
    theta: np.ndarray
    slope: np.ndarray           # law restricted to x at fixed theta
    intercept: np.ndarray
    ineq_lhs: np.ndarray        # region rows: ineq_lhs @ x <= ineq_rhs
    ineq_rhs: np.ndarray
    center: np.ndarray
    radius: float
    retained: bool = True
    degenerate: bool = False
    merged_iotas: tuple = ()

    def contains(self, x, tol: float = 1e-7) -> bool:
        x = np.asarray(x, dtype=float)
        if self.ineq_lhs.shape[0] == 0:
            return True
        return bool(np.all(self.ineq_lhs @ x - self.ineq_rhs <= tol))

    def solution(self, x):
        return self.slope @ np.asarray(x, dtype=float) + self.intercept


def _chebyshev_center(A, b, box_lo, box_hi, opts):
    """Largest inscribed ball of {A x <= b} within a box; returns (x, r)."""
    n = box_lo.shape[0]
    rows = [A] if A.shape[0] else []
    rhs = [b] if A.shape[0] else []
    rows.append(np.eye(n))
    rhs.append(box_hi)
    rows.append(-np.eye(n))
    rhs.append(-box_lo)
    A_all = np.vstack(rows)
    b_all = np.concatenate(rhs)
    norms = np.linalg.norm(A_all, axis=1)
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    lp = LinearProgram(
        cost=cost,
        ineq_lhs=np.hstack([A_all, norms[:, None]]),
        ineq_rhs=b_all,
        lower=np.concatenate([np.full(n, -np.inf), [0.0]]),
        upper=np.concatenate([np.full(n, np.inf), [np.linalg.norm(box_hi - box_lo)]]),
    )
    res = solve_lp(lp, opts)
    if res.status is not Status.OPTIMAL:
        return None, -np.inf
    return res.primal[:n], float(res.primal[n])


def enumerate_regions(spec: ParamQPSpec, theta, x_box=None,
                      options: SolverOptions = None,
                      include_discarded: bool = False):
    """All critical regions at the fixed parameter vector.

    Examines every active set with |iota| <= n_z - m2, builds the affine law
    and the region inequalities (inactive primal rows plus nonnegativity of
    the dual law), and keeps regions whose Chebyshev ball within the x-box
    has radius at least the interiority tolerance.  Candidates with
    identical laws are merged onto the first hit.
    """
    opts = options or DEFAULT_OPTIONS
    if spec.m1 > DESK_M1 or spec.n_z > DESK_NZ:
        raise ScaleExceeded(f"desk scale is m1 <= {DESK_M1}, n_z <= {DESK_NZ}")
    theta = np.asarray(theta, dtype=float).reshape(spec.n_theta)
    if x_box is None:
        box_lo, box_hi = -np.ones(spec.n_x), np.ones(spec.n_x)
    else:
        box_lo = np.broadcast_to(np.asarray(x_box[0], dtype=float), (spec.n_x,)).copy()
        box_hi = np.broadcast_to(np.asarray(x_box[1], dtype=float), (spec.n_x,)).copy()

    regions = []
    seen_laws = []
    max_active = max(spec.n_z - spec.m2, 0)
    for size in range(0, min(max_active, spec.m1) + 1):
        for iota in combinations(range(spec.m1), size):
            law = explicit_law(spec, iota, opts)
            region = _build_region(spec, law, theta, box_lo, box_hi, opts)
            if region is None:
                if include_discarded:
                    dummy = CriticalRegion(
                        iota=iota, law=law, theta=theta,
                        slope=law.A_tilde,
                        intercept=law.bias_theta @ theta + law.bias_const,
                        ineq_lhs=np.zeros((0, spec.n_x)), ineq_rhs=np.zeros(0),
                        center=np.full(spec.n_x, np.nan), radius=-np.inf,
                        retained=False, degenerate=law.rank_deficient)
                    regions.append(dummy)
                continue
            key = np.round(np.concatenate([region.slope.ravel(), region.intercept]), 9)
            dup = next((r for r in regions if r.retained
                        and np.array_equal(r._law_key, key)), None)
            region._law_key = key
            if dup is not None:
                dup.merged_iotas = dup.merged_iotas + (iota,)
                if include_discarded:
                    region.retained = False
                    regions.append(region)
                continue
            regions.append(region)
    if include_discarded:
        return regions
    return [r for r in regions if r.retained]


def _build_region(spec, law, theta, box_lo, box_hi, opts):
    if spec.kind == "lp" and law.stationarity_defect > 1e-7:
        return None
    inactive = [j for j in range(spec.m1) if j not in law.iota]
    intercept = law.bias_theta @ theta + law.bias_const
    rows = []
    rhs = []
    for j in inactive:
        a = spec.A1[j] @ law.A_tilde - spec.U1x[j]
        b = (spec.b1[j] + spec.U1t[j] @ theta - spec.A1[j] @ intercept)
        rows.append(a)
        rhs.append(b)
    lam_int = law.lam_theta @ theta + law.lam_const if law.iota else np.zeros(0)
    for p in range(len(law.iota)):
        rows.append(-law.lam_x[p])
        rhs.append(lam_int[p])
    # membership is relative to the sampled x-box
    eye = np.eye(spec.n_x)
    for i in range(spec.n_x):
        rows.append(eye[i])
        rhs.append(box_hi[i])
        rows.append(-eye[i])
        rhs.append(-box_lo[i])
    A = np.vstack(rows) if rows else np.zeros((0, spec.n_x))
    b = np.asarray(rhs, dtype=float)
    center, radius = _chebyshev_center(A, b, box_lo, box_hi, opts)
    if center is None or radius < INTERIOR_TOL:
        return None
    if law.iota:
        lam_c = law.ineq_duals(center, theta)
        if lam_c.size and lam_c.min() < -DUAL_SCREEN_TOL:
            return None
    region = CriticalRegion(
        iota=law.iota, law=law, theta=theta, slope=law.A_tilde,
        intercept=intercept, ineq_lhs=A, ineq_rhs=b, center=center,
        radius=radius, retained=True, degenerate=law.rank_deficient)
    region._law_key = None
    return region


def explicit_eval(regions, x, tol: float = 1e-7) -> np.ndarray:
    """Value of the piecewise-affine law at x; first region wins on ties."""
    x = np.asarray(x, dtype=float)
    for region in regions:
        if region.retained and region.contains(x, tol):
            return region.solution(x)
    raise NoRegion(f"no retained region contains {x}")


def kappa(spec: ParamQPSpec, mode: str = None, options: SolverOptions = None) -> float:
    """Largest spectral norm of the solution slope over all candidate active
    sets with |iota| <= n_z - m2 (pseudo-inverse on rank-deficient stacks)."""
    if spec.m1 > DESK_M1 or spec.n_z > DESK_NZ:
        raise ScaleExceeded(f"desk scale is m1 <= {DESK_M1}, n_z <= {DESK_NZ}")
    mode = mode or spec.kind
    if mode != spec.kind:
        raise DimensionMismatch(f"spec has kind {spec.kind!r}, not {mode!r}")
    worst = 0.0
    max_active = max(spec.n_z - spec.m2, 0)
    for size in range(0, min(max_active, spec.m1) + 1):
        for iota in combinations(range(spec.m1), size):
            law = explicit_law(spec, iota, options)
            if law.A_tilde.size:
                worst = max(worst, float(np.linalg.norm(law.A_tilde, 2)))
    return worst


def count_regions(m1: int, n_z: int, m2: int) -> int:
    """sum_{i=0}^{min(n_z - m2, m1)} C(m1, i)."""
    if m1 < 0 or n_z < 0 or m2 < 0:
        raise DimensionMismatch("counts must be nonnegative")
    top = min(n_z - m2, m1)
    return sum(comb(m1, i) for i in range(0, top + 1)) if top >= 0 else 0


def covering_bound_pwa(eps: float, kappa_star: float, m1: int, n_z: int,
                       m2: int) -> float:
    """Bare product (kappa*^2 / eps^2) * count_regions; the absorbed constant
    of the underlying bound is not included."""
    if eps <= 0:
        raise DimensionMismatch("eps must be positive")
    return (kappa_star ** 2 / eps ** 2) * count_regions(m1, n_z, m2)


def covering_bound_smooth(eps: float, k: int, n_x: int, n: int) -> float:
    """Bare formula n * (1/eps)^(1/k) + k^n_x * log(1/eps), natural log."""
    if not (0 < eps <= 1) or k < 1:
        raise DimensionMismatch("need eps in (0, 1] and k >= 1")
    return n * (1.0 / eps) ** (1.0 / k) + (k ** n_x) * log(1.0 / eps)


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------

def regions_to_json(regions) -> str:
    doc = []
    for r in regions:
        doc.append({
            "iota": list(r.iota),
            "slope": r.slope.tolist(),
            "intercept": r.intercept.tolist(),
            "ineq_lhs": r.ineq_lhs.tolist(),
            "ineq_rhs": r.ineq_rhs.tolist(),
            "center": None if np.any(np.isnan(r.center)) else r.center.tolist(),
            "radius": r.radius if np.isfinite(r.radius) else None,
            "retained": r.retained,
            "degenerate": r.degenerate,
            "merged_iotas": [list(i) for i in r.merged_iotas],
        })
    return json.dumps(doc, indent=2)


def regions_to_csv(regions) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["iota", "active_count", "spectral_norm", "retained"])
    for r in regions:
        norm = float(np.linalg.norm(r.slope, 2)) if r.slope.size else 0.0
        writer.writerow(["|".join(map(str, r.iota)), len(r.iota),
                         f"{norm:.12g}", int(r.retained)])
    return buf.getvalue()


def spec_to_json(spec: ParamQPSpec) -> str:
    doc = {"n_z": spec.n_z, "n_x": spec.n_x, "n_theta": spec.n_theta,
           "kind": spec.kind}
    for name in ("A0", "U0x", "U0t", "b0", "A1", "b1", "U1x", "U1t",
                 "A2", "b2", "U2x", "U2t"):
        doc[name] = getattr(spec, name).tolist()
    return json.dumps(doc, indent=2)


def spec_from_json(text: str) -> ParamQPSpec:
    doc = json.loads(text)
    return ParamQPSpec(**doc)
