"""Max-affine approximation of twice-differentiable targets on a box.

Pipeline: split the target into a difference of convex functions by adding
and subtracting a quadratic with curvature rho, sample each component's
gradient field, select anchors by greedy farthest-point coverage of the
expanded point set x + t * grad(x), fit tangent planes at the anchors, and
certify the fit by an exact maximum over a dense evaluation grid.  The
fitted pair emits an LP network through the epigraph construction.

All sampling and greedy steps are deterministic, so fits are reproducible
and refining the anchor budget keeps earlier anchors as a prefix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import product
from math import ceil

import numpy as np

from .errors import (
    BudgetExhausted,
    CurvatureTooSmall,
    DimensionMismatch,
    ScaleExceeded,
)
from .gadgets import (
    MaxAffineFunction,
    MaxAffinePair,
    dc_difference_net,
    difference_lemma_counts,
)

__all__ = [
    "DCDecomposition",
    "PlaneBudget",
    "AnchorNet",
    "FitResult",
    "EmitReport",
    "dc_split",
    "plane_budget",
    "anchor_net",
    "fit_maxaffine",
    "emit_lp",
    "fit_to_json",
    "fit_from_json",
]

DEFAULT_K_CAP = 10 ** 6
_GRAD_STEP = 1e-6


def _fd_gradient(f, x, h=_GRAD_STEP):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@dataclass
class DCDecomposition:
    """f = phi1 - phi2 with both components convex on the unit cube."""

    phi1: object
    phi2: object
    grad1: object
    grad2: object
    rho: float
    n_x: int
    lipschitz: float = None
    bound: float = None

    def __call__(self, x):
        return self.phi1(x) - self.phi2(x)


def _midpoint_convexity_probe(phi, n_x, rng, segments=1000, tol=1e-9):
    """Largest midpoint-convexity violation over random segments in the cube."""
    worst = 0.0
    A = rng.uniform(0.0, 1.0, size=(segments, n_x))
    B = rng.uniform(0.0, 1.0, size=(segments, n_x))
    for a, b in zip(A, B):
        mid = 0.5 * (a + b)
        gap = phi(mid) - 0.5 * (phi(a) + phi(b))
        worst = max(worst, gap)
        if worst > tol:
            break
    return worst


def dc_split(f, rho: float, n_x: int = 1, grad=None, probe_segments: int = 1000,
             seed: int = 0) -> DCDecomposition:
    """Split f into (f + rho/2 |x|^2) - (rho/2 |x|^2).

    ``rho`` must dominate the curvature of f on the unit cube so the first
    component is convex; both components are probed for midpoint convexity
    on random segments and CurvatureTooSmall is raised on failure.  The
    gradient of f defaults to a symmetric finite-difference estimate.
    """
    rho = float(rho)
    if rho < 0:
        raise CurvatureTooSmall("curvature parameter must be nonnegative")
    grad_f = grad if grad is not None else (lambda x: _fd_gradient(f, x))

    def phi1(x):
        x = np.asarray(x, dtype=float)
        return float(f(x) + 0.5 * rho * float(x @ x))

    def phi2(x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * rho * float(x @ x))

    def grad1(x):
        x = np.asarray(x, dtype=float)
        return np.asarray(grad_f(x), dtype=float) + rho * x

    def grad2(x):
        return rho * np.asarray(x, dtype=float)

    rng = np.random.default_rng(seed)
    tol = 1e-9 * (1.0 + abs(rho))
    gap = _midpoint_convexity_probe(phi1, n_x, rng, probe_segments, tol)
    if gap > tol:
        raise CurvatureTooSmall(
            f"first component fails midpoint convexity by {gap:.3e}; increase rho")
    return DCDecomposition(phi1=phi1, phi2=phi2, grad1=grad1, grad2=grad2,
                           rho=rho, n_x=n_x)


@dataclass(frozen=True)
class PlaneBudget:
    k_star: int
    t_star: float


def plane_budget(n_x: int, L: float, eps: float) -> PlaneBudget:
    """Theoretical plane count ceil((eps / (144 n_x L))^(-n_x/2)) and the
    optimizing expansion weight t* = 1 / (2 L)."""
    if eps <= 0 or L <= 0 or n_x < 1:
        raise DimensionMismatch("need eps > 0, L > 0, n_x >= 1")
    raw = (eps / (144.0 * n_x * L)) ** (-n_x / 2.0)
    return PlaneBudget(k_star=max(1, ceil(raw)), t_star=1.0 / (2.0 * L))


@dataclass
class AnchorNet:
    """Greedy cover of the expanded set {x + t grad(x)} with its preimages."""

    t: float
    anchors: np.ndarray        # (K, n_x) preimage points
    grads: np.ndarray          # (K, n_x)
    values: np.ndarray         # (K,) component values at anchors
    images: np.ndarray         # (K, n_x) points actually covered against
    cover_radius: float
    target_radius: float

    @property
    def n_anchors(self) -> int:
        return self.anchors.shape[0]


def _unit_grid(n_x: int, per_axis: int) -> np.ndarray:
    axes = [np.linspace(0.0, 1.0, per_axis)] * n_x
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def _greedy_order(points: np.ndarray, budget: int):
    """Deterministic farthest-point ordering; returns (indices, radii) where
    radii[k] is the cover radius achieved by the first k+1 points."""
    S = points.shape[0]
    budget = min(budget, S)
    first = int(np.argmin(np.linalg.norm(points - points.mean(axis=0), axis=1)))
    chosen = [first]
    dist = np.linalg.norm(points - points[first], axis=1)
    radii = []
    for _ in range(budget - 1):
        radii.append(float(dist.max()))
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    radii.append(float(dist.max()))
    return np.asarray(chosen), np.asarray(radii)


def anchor_net(phi, grad, t: float, eps: float, budget: int = 1024,
               n_x: int = 1, samples_per_axis: int = None) -> AnchorNet:
    """Greedy sqrt(eps)-cover of the sampled expanded set.

    Selects anchors by farthest-point insertion over a dense sample of
    images x + t * grad(x) until the cover radius drops to sqrt(eps) or the
    budget is hit, in which case BudgetExhausted reports the achieved
    radius.
    """
    if t <= 0:
        raise DimensionMismatch("expansion weight t must be positive")
    per_axis = samples_per_axis or (2001 if n_x == 1 else (65 if n_x == 2 else 17))
    X = _unit_grid(n_x, per_axis)
    G = np.vstack([np.asarray(grad(x), dtype=float) for x in X])
    images = X + t * G
    order, radii = _greedy_order(images, budget)
    target = float(np.sqrt(eps))
    hit = np.flatnonzero(radii <= target)
    if hit.size == 0:
        raise BudgetExhausted(
            f"cover radius {radii[-1]:.4g} above target {target:.4g} "
            f"after {order.size} anchors", achieved_radius=float(radii[-1]))
    k = int(hit[0]) + 1
    idx = order[:k]
    values = np.asarray([phi(x) for x in X[idx]], dtype=float)
    return AnchorNet(t=t, anchors=X[idx], grads=G[idx], values=values,
                     images=images[idx], cover_radius=float(radii[k - 1]),
                     target_radius=target)


def _tangent_planes(values, grads, anchors) -> MaxAffineFunction:
    offsets = values - np.einsum("kd,kd->k", grads, anchors)
    return MaxAffineFunction(planes=grads.copy(), offsets=offsets)


@dataclass
class FitResult:
    pair: MaxAffinePair
    certificate: float          # exact max |f - pair| over the evaluation grid
    eps: float
    plane_counts: tuple
    lipschitz: float
    rho: float
    budget: PlaneBudget
    anchors: tuple              # (AnchorNet, AnchorNet)
    domain: tuple               # (lo, hi) arrays in original coordinates
    grid_points: int

    @property
    def n_planes(self) -> int:
        return max(self.plane_counts)


def _estimate_rho(f, n_x: int, probe_per_axis: int = 20, h: float = 1e-3) -> float:
    """1.5x the largest absolute second difference over a probe grid."""
    X = _unit_grid(n_x, probe_per_axis)
    worst = 0.0
    for x in X:
        x = np.clip(x, 2 * h, 1 - 2 * h)
        for i in range(n_x):
            ei = np.zeros(n_x)
            ei[i] = h
            dii = (f(x + ei) - 2 * f(x) + f(x - ei)) / h ** 2
            worst = max(worst, abs(dii))
            for j in range(i + 1, n_x):
                ej = np.zeros(n_x)
                ej[j] = h
                dij = (f(x + ei + ej) - f(x + ei - ej)
                       - f(x - ei + ej) + f(x - ei - ej)) / (4 * h ** 2)
                worst = max(worst, abs(dij))
    return 1.5 * worst * n_x


def fit_maxaffine(f, eps: float, n_x: int = 1, rho: float = None, grad=None,
                  domain=None, budget: int = 600, k_cap: int = DEFAULT_K_CAP,
                  cert_per_axis: int = None, seed: int = 0) -> FitResult:
    """Fit a certified max-affine pair to f with uniform error at most eps.

    Anchors are added in greedy prefix order until the exact grid maximum of
    |f - (h1 - h2)| drops to eps; refining the budget therefore never
    discards earlier anchors, and the certified error is monotone in the
    budget.  Raises ScaleExceeded when the theoretical plane count exceeds
    ``k_cap`` and BudgetExhausted when the anchor budget runs out first.
    """
    if n_x > 2 and budget <= 600:
        raise ScaleExceeded("default budgets support n_x <= 2")
    lo = np.zeros(n_x) if domain is None else np.broadcast_to(
        np.asarray(domain[0], dtype=float), (n_x,)).copy()
    hi = np.ones(n_x) if domain is None else np.broadcast_to(
        np.asarray(domain[1], dtype=float), (n_x,)).copy()
    width = hi - lo
    if np.any(width <= 0):
        raise DimensionMismatch("domain upper bounds must exceed lower bounds")

    f_unit = (lambda u: f(lo + width * u)) if domain is not None else f
    grad_unit = None
    if grad is not None:
        grad_unit = (lambda u: width * np.asarray(grad(lo + width * u), dtype=float)) \
            if domain is not None else grad

    if rho is None:
        rho = _estimate_rho(f_unit, n_x)
    split = dc_split(f_unit, rho, n_x=n_x, grad=grad_unit, seed=seed)

    per_axis = 2001 if n_x == 1 else (65 if n_x == 2 else 17)
    X = _unit_grid(n_x, per_axis)
    G1 = np.vstack([split.grad1(x) for x in X])
    G2 = rho * X
    L = float(max(np.abs(G1).max(initial=0.0), np.abs(G2).max(initial=0.0), 1e-12))
    split.lipschitz = L
    budget_report = plane_budget(n_x, L, eps)
    if budget_report.k_star > k_cap:
        raise ScaleExceeded(
            f"theoretical plane count {budget_report.k_star} exceeds cap {k_cap}")
    t = budget_report.t_star

    V1 = np.asarray([split.phi1(x) for x in X])
    V2 = 0.5 * rho * np.einsum("kd,kd->k", X, X)
    order1, _ = _greedy_order(X + t * G1, min(budget, X.shape[0]))
    order2, _ = _greedy_order(X + t * G2, min(budget, X.shape[0]))

    cpa = cert_per_axis or (1001 if n_x == 1 else 51)
    C = _unit_grid(n_x, cpa)
    target = np.asarray([f_unit(x) for x in C])

    k = min(8, order1.size, order2.size)
    cert = np.inf
    pair = None
    counts = (0, 0)
    while True:
        i1, i2 = order1[:k], order2[:k]
        h1 = _tangent_planes(V1[i1], G1[i1], X[i1])
        h2 = _tangent_planes(V2[i2], G2[i2], X[i2])
        pair = MaxAffinePair(h1, h2)
        cert = float(np.max(np.abs(pair.eval_batch(C) - target)))
        counts = (h1.n_planes, h2.n_planes)
        if cert <= eps:
            break
        if k >= min(budget, order1.size, order2.size):
            raise BudgetExhausted(
                f"certified error {cert:.4g} above eps {eps:.4g} with {k} anchors",
                achieved_radius=cert)
        k = min(2 * k, budget, order1.size, order2.size)

    net1 = AnchorNet(t=t, anchors=X[order1[:k]], grads=G1[order1[:k]],
                     values=V1[order1[:k]], images=(X + t * G1)[order1[:k]],
                     cover_radius=np.nan, target_radius=np.nan)
    net2 = AnchorNet(t=t, anchors=X[order2[:k]], grads=G2[order2[:k]],
                     values=V2[order2[:k]], images=(X + t * G2)[order2[:k]],
                     cover_radius=np.nan, target_radius=np.nan)

    if domain is not None:
        pair = MaxAffinePair(_rescale_planes(pair.h1, lo, width),
                             _rescale_planes(pair.h2, lo, width))
    return FitResult(pair=pair, certificate=cert, eps=eps, plane_counts=counts,
                     lipschitz=L, rho=rho, budget=budget_report,
                     anchors=(net1, net2), domain=(lo, hi), grid_points=C.shape[0])


def _rescale_planes(h: MaxAffineFunction, lo, width) -> MaxAffineFunction:
    planes = h.planes / width
    offsets = h.offsets - planes @ lo
    return MaxAffineFunction(planes=planes, offsets=offsets)


@dataclass
class EmitReport:
    network: object
    counts: dict


def emit_lp(pair: MaxAffinePair) -> EmitReport:
    """Emit the difference network plus the classical count bookkeeping."""
    return EmitReport(network=dc_difference_net(pair),
                      counts=difference_lemma_counts(pair))


# ---------------------------------------------------------------------------
# Fitted-pair documents
# ---------------------------------------------------------------------------

def fit_to_json(fit: FitResult) -> str:
    doc = {
        "eps": fit.eps,
        "certificate": fit.certificate,
        "plane_counts": list(fit.plane_counts),
        "lipschitz": fit.lipschitz,
        "rho": fit.rho,
        "budget": {"k_star": fit.budget.k_star, "t_star": fit.budget.t_star},
        "domain": {"lo": fit.domain[0].tolist(), "hi": fit.domain[1].tolist()},
        "grid_points": fit.grid_points,
        "components": [
            {"planes": h.planes.tolist(), "offsets": h.offsets.tolist()}
            for h in (fit.pair.h1, fit.pair.h2)
        ],
        "anchors": [
            {"t": a.t, "points": a.anchors.tolist(), "grads": a.grads.tolist()}
            for a in fit.anchors
        ],
    }
    return json.dumps(doc, indent=2)


def fit_from_json(text: str) -> MaxAffinePair:
    doc = json.loads(text)
    h1, h2 = (MaxAffineFunction(planes=np.asarray(c["planes"], dtype=float),
                                offsets=np.asarray(c["offsets"], dtype=float))
              for c in doc["components"])
    return MaxAffinePair(h1, h2)
