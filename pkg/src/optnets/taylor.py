"""Compiler from a smooth target on the unit cube to a multilayer LP network.

The construction partitions [0,1]^n_x into N^n_x closed cells, takes the
Taylor polynomial of the target at each cell center, reconstructs every
monomial exactly with a chain of product gadgets, gates each local
polynomial by the cell's box indicator through two switched-product layers,
and sums the gated values in the affine read-out.  Off the measure-zero set
of cell faces and chain singular points the only error is the Taylor
remainder.

Targets are assumed rescaled so that all derivatives up to the smoothness
order are bounded by one; pass ``derivative_bound`` to have the compiler
divide by the bound internally and restore the scale in the read-out.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from math import ceil, comb, factorial

import numpy as np

from .errors import DimensionMismatch, OracleUnavailable
from .gadgets import (
    _divide_node,
    _reciprocal_node,
    affine_value_node,
    box_indicator_node,
    switched_product_node,
)
from .network import (
    INPUT,
    AffineBlock,
    NetNode,
    ParamProgram,
    SolutionNetwork,
    evaluate,
    evaluate_batch,
    widths,
)

__all__ = [
    "FACE_ETA",
    "TaylorGridSpec",
    "CellTaylor",
    "grid_size",
    "multi_indices",
    "central_difference",
    "taylor_coeffs",
    "monomial_chain",
    "TaylorNet",
    "build_taylor_net",
    "nudge_into_grid",
    "error_bound",
    "report_complexity",
    "sidecar_report",
]

FACE_ETA = 1e-9


def grid_size(n_x: int, k: int, eps: float) -> int:
    """Grid resolution N = ceil(n_x * (1/(k! * eps))^(1/k)), at least 1."""
    if n_x < 1 or k < 1 or eps <= 0:
        raise DimensionMismatch("need n_x >= 1, k >= 1, eps > 0")
    return max(1, ceil(n_x * (1.0 / (factorial(k) * eps)) ** (1.0 / k)))


def multi_indices(n_x: int, k: int):
    """All derivative multi-indices with total order <= k, graded lexicographic."""
    out = [idx for idx in product(range(k + 1), repeat=n_x) if sum(idx) <= k]
    out.sort(key=lambda t: (sum(t), t))
    return out


@dataclass(frozen=True)
class TaylorGridSpec:
    n_x: int
    k: int
    eps: float
    N: int
    derivative_mode: str = "analytic"   # "analytic" or "fd"
    fd_step: float = None

    def __post_init__(self):
        if self.N < 1 or self.k < 1 or self.n_x < 1:
            raise DimensionMismatch("invalid grid specification")
        if self.derivative_mode not in ("analytic", "fd"):
            raise DimensionMismatch(f"unknown derivative mode {self.derivative_mode!r}")
        if self.fd_step is None:
            object.__setattr__(self, "fd_step", max(1e-4, np.sqrt(self.eps) / 10.0))

    @staticmethod
    def auto(n_x: int, k: int, eps: float, derivative_mode: str = "analytic") -> "TaylorGridSpec":
        return TaylorGridSpec(n_x=n_x, k=k, eps=eps, N=grid_size(n_x, k, eps),
                              derivative_mode=derivative_mode)


@dataclass(frozen=True)
class CellTaylor:
    cell: tuple
    center: np.ndarray
    coeffs: dict          # multi-index tuple -> D^n f(center) / n!

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        d = x - self.center
        total = 0.0
        for n, c in self.coeffs.items():
            total += c * np.prod([d[i] ** p for i, p in enumerate(n) if p], initial=1.0)
        return float(total)


def cell_center(m, N: int) -> np.ndarray:
    return (2 * np.asarray(m, dtype=float) + 1.0) / (2.0 * N)


def _stencil(order: int):
    """Central finite-difference stencil of accuracy order >= 2.

    Returns (integer offsets, weights); apply as
    sum_i w_i f(x + offs_i * h) / h**order.  The width is chosen so the
    stencil reproduces polynomials through degree four exactly.
    """
    if order == 0:
        return np.array([0]), np.array([1.0])
    s = (order + 3) // 2
    offs = np.arange(-s, s + 1)
    M = np.vstack([offs.astype(float) ** r for r in range(2 * s + 1)])
    rhs = np.zeros(2 * s + 1)
    rhs[order] = factorial(order)
    return offs, np.linalg.solve(M, rhs)


def central_difference(f, center, multi_index, h: float) -> float:
    """Tensor-product central stencil estimate of D^n f at the center."""
    center = np.asarray(center, dtype=float)
    stencils = [_stencil(int(p)) for p in multi_index]
    total = 0.0
    for picks in product(*(range(len(o)) for o, _ in stencils)):
        w = 1.0
        x = center.copy()
        for axis, pick in enumerate(picks):
            offs, ws = stencils[axis]
            w *= ws[pick]
            x[axis] += offs[pick] * h
        if w != 0.0:
            total += w * f(x)
    return total / h ** sum(multi_index)


def taylor_coeffs(f, center, k: int, deriv=None, fd_step: float = 1e-3,
                  cell=None) -> CellTaylor:
    """Taylor coefficients D^n f / n! at the center, for all |n| <= k.

    ``deriv(multi_index, x)`` supplies exact derivatives; without it central
    finite differences with the given step are used.
    """
    center = np.asarray(center, dtype=float)
    n_x = center.shape[0]
    if f is None and deriv is None:
        raise OracleUnavailable("need a function or a derivative oracle")
    coeffs = {}
    for n in multi_indices(n_x, k):
        if deriv is not None:
            d = float(deriv(n, center))
        else:
            d = central_difference(f, center, n, fd_step)
        scale = 1.0
        for p in n:
            scale *= factorial(int(p))
        coeffs[n] = d / scale
    return CellTaylor(cell=tuple(cell) if cell is not None else (0,) * n_x,
                      center=center, coeffs=coeffs)


# ---------------------------------------------------------------------------
# Monomial chains
# ---------------------------------------------------------------------------

def _coord_row(n_x: int, i: int) -> np.ndarray:
    row = np.zeros((1, n_x))
    row[0, i] = 1.0
    return row


def _add_chain(net: SolutionNetwork, prefix: str, n, centers) -> str:
    """Add the product-gadget chain for prod_i (x_i - centers_i)^{n_i}.

    Returns the id of the chain's final node.  Orders the factors
    left-to-right over coordinates with exponents taken in sequence, so the
    layout is deterministic.  Total order 0 and 1 reduce to a single
    affine-pinned node.
    """
    n_x = len(n)
    factors = [i for i in range(n_x) for _ in range(n[i])]
    if not factors:
        node = affine_value_node(np.zeros(n_x), 1.0, node_id=f"{prefix}const")
        net.add_node(node)
        net.connect(INPUT, node.id, "x")
        return node.id
    if len(factors) == 1:
        i = factors[0]
        e = np.zeros(n_x)
        e[i] = 1.0
        node = affine_value_node(e, -centers[i], node_id=f"{prefix}lin")
        net.add_node(node)
        net.connect(INPUT, node.id, "x")
        return node.id
    i0 = factors[0]
    head = _reciprocal_node(centers[i0], f"{prefix}r0", False)
    net.add_node(head)
    net.connect(INPUT, head.id, "u", matrix=_coord_row(n_x, i0))
    recip = head.id
    tail = None
    for step, i in enumerate(factors[1:]):
        div = _divide_node(centers[i], f"{prefix}d{step}", False)
        net.add_node(div)
        net.connect(recip, div.id, "v")
        net.connect(INPUT, div.id, "w", matrix=_coord_row(n_x, i))
        tail = div.id
        if step < len(factors) - 2:
            nxt = _reciprocal_node(0.0, f"{prefix}r{step + 1}", False)
            net.add_node(nxt)
            net.connect(tail, nxt.id, "u")
            recip = nxt.id
    return tail


def monomial_chain(m, n, N: int) -> SolutionNetwork:
    """Chain network computing prod_i (x_i - (2 m_i + 1)/(2N))^(n_i) exactly
    away from the cell-center hyperplanes.

    Requires total order >= 2; lower orders are plain affine functions and
    belong in a read-out.  Depth is at most 2*(|n| - 1) and every node has
    one variable and two constraints.
    """
    n = tuple(int(v) for v in n)
    if sum(n) < 2:
        raise DimensionMismatch("monomial chains need total order >= 2")
    m = np.asarray(m, dtype=int)
    if m.shape[0] != len(n):
        raise DimensionMismatch("cell index and exponent arity differ")
    centers = cell_center(m, N)
    net = SolutionNetwork(n_x=len(n))
    tail = _add_chain(net, "chain_", n, centers)
    net.add_output([(tail, [[1.0]])])
    return net.freeze()


# ---------------------------------------------------------------------------
# Full architecture
# ---------------------------------------------------------------------------

def _gate_node(bound: float, weights, node_id: str) -> NetNode:
    """Switched product of a binary gate with a weighted sum of chain slots."""
    C = len(weights)
    M = float(bound)
    slots = {"gate": 1}
    rhs_sens = {"gate": np.array([[M], [M], [-M]])}
    for j, w in enumerate(weights):
        slots[f"t{j}"] = 1
        rhs_sens[f"t{j}"] = np.array([[0.0], [0.0], [float(w)]])
    program = ParamProgram(
        n_z=1, slots=slots,
        cost=AffineBlock(base=np.array([-1.0])),
        ineq_lhs=AffineBlock(base=np.array([[1.0], [-1.0], [1.0]])),
        ineq_rhs=AffineBlock(base=np.array([0.0, 0.0, M]), sens=rhs_sens),
    )
    return NetNode(id=node_id, program=program)


@dataclass
class TaylorNet:
    """Compiled network plus the grid data needed to evaluate it safely."""

    network: SolutionNetwork
    spec: TaylorGridSpec
    cells: list
    derivative_bound: float = 1.0
    face_eta: float = FACE_ETA

    def __call__(self, x, options=None) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        xn, _ = nudge_into_grid(x[None, :], self.spec.N, self.face_eta)
        return float(evaluate(self.network, xn[0], options)[0])

    def eval_batch(self, X, options=None) -> np.ndarray:
        xn, _ = nudge_into_grid(X, self.spec.N, self.face_eta)
        return evaluate_batch(self.network, xn, options)[:, 0]


def nudge_into_grid(X, N: int, eta: float = FACE_ETA):
    """Clamp into the open unit cube and push points off cell faces.

    Points within eta of an interior face move into the upper adjacent cell
    (matching the floor convention for cell lookup).  Returns the adjusted
    copy and a mask of the rows that were moved.
    """
    X = np.array(np.atleast_2d(X), dtype=float)
    before = X.copy()
    X = np.clip(X, eta, 1.0 - eta)
    j = np.round(X * N)
    face = j / N
    on_face = np.abs(X - face) < eta
    pushed = np.where(face >= 1.0 - 1e-15, face - eta, face + eta)
    X = np.where(on_face, pushed, X)
    moved = np.any(np.abs(X - before) > 0, axis=1)
    return X, moved


def build_taylor_net(f, spec: TaylorGridSpec, deriv=None,
                     derivative_bound: float = 1.0) -> TaylorNet:
    """Compile the target into the gated-Taylor LP network.

    ``f`` maps points of [0,1]^n_x to floats.  In analytic mode ``deriv``
    must supply exact derivatives (multi_index, x) -> float; in fd mode
    central stencils with the spec's step are used.  The certified bound
    applies to f / derivative_bound.
    """
    n_x, k, N = spec.n_x, spec.k, spec.N
    D = float(derivative_bound)
    if spec.derivative_mode == "analytic" and deriv is None:
        raise OracleUnavailable("analytic mode needs a derivative oracle")
    indices = multi_indices(n_x, k)
    net = SolutionNetwork(n_x=n_x)
    cells = []
    output_terms = []
    for m in product(range(N), repeat=n_x):
        tag = "_".join(map(str, m))
        center = cell_center(m, N)
        if spec.derivative_mode == "analytic":
            ct = taylor_coeffs(None, center, k, cell=m,
                               deriv=lambda n, x: deriv(n, x) / D)
        else:
            ct = taylor_coeffs(lambda x: f(x) / D, center, k, cell=m,
                               fd_step=spec.fd_step)
        cells.append(ct)

        ind = box_indicator_node(m, N, node_id=f"I_{tag}")
        net.add_node(ind)
        net.connect(INPUT, ind.id, "x")

        tails = [_add_chain(net, f"P_{tag}_{j}_", n, center) for j, n in enumerate(indices)]

        weights = [ct.coeffs[n] for n in indices]
        M = 1.0 + float(np.sum(np.abs(weights)))
        if k == 1:
            # a single switched layer keeps the depth at 2
            g1 = _gate_node(M, weights, node_id=f"G_{tag}")
            net.add_node(g1)
            net.connect(ind.id, g1.id, "gate")
            for j, tail in enumerate(tails):
                net.connect(tail, g1.id, f"t{j}")
            output_terms.append((g1.id, [[D]]))
            continue
        g1 = _gate_node(M, weights, node_id=f"G1_{tag}")
        net.add_node(g1)
        net.connect(ind.id, g1.id, "gate")
        for j, tail in enumerate(tails):
            net.connect(tail, g1.id, f"t{j}")
        g2 = switched_product_node(M, node_id=f"G2_{tag}")
        net.add_node(g2)
        net.connect(ind.id, g2.id, "gate")
        net.connect(g1.id, g2.id, "val")
        output_terms.append((g2.id, [[D]]))
    net.add_output(output_terms)
    return TaylorNet(network=net.freeze(), spec=spec, cells=cells, derivative_bound=D)


def error_bound(spec: TaylorGridSpec) -> float:
    """Uniform Taylor bound (n_x^k / k!) * N^(-k) for unit-ball targets."""
    return (spec.n_x ** spec.k / factorial(spec.k)) * spec.N ** (-float(spec.k))


def report_complexity(tn: TaylorNet) -> dict:
    """Width/depth accounting; the first-layer numbers follow the closed-form
    cell-count expressions exactly for compiled networks."""
    spec = tn.spec
    C = comb(spec.k + spec.n_x, spec.n_x)
    cells = spec.N ** spec.n_x
    w = widths(tn.network)
    return {
        "grid_resolution": spec.N,
        "cells": cells,
        "coefficients_per_cell": C,
        "depth": w.depth,
        "depth_bound": 2 * spec.k,
        "first_layer_constraints": w.c_widths[0] if w.c_widths else 0,
        "first_layer_variables": w.v_widths[0] if w.v_widths else 0,
        "formula_first_layer_constraints": (2 * spec.n_x + 2 + 2 * C) * cells,
        "formula_first_layer_variables": (1 + C) * cells,
        "total_nodes": len(tn.network.nodes),
        "total_variables": sum(nd.program.n_z for nd in tn.network.nodes.values()),
        "total_constraints": sum(nd.program.constraint_count
                                 for nd in tn.network.nodes.values()),
    }


def measured_grid_error(tn: TaylorNet, f, points_per_axis: int = 25) -> float:
    """Exact max deviation from f over an interior evaluation grid."""
    axes = [(np.arange(points_per_axis) + 0.5) / points_per_axis] * tn.spec.n_x
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.column_stack([m.ravel() for m in mesh])
    approx = tn.eval_batch(X)
    target = np.array([f(x) for x in X])
    return float(np.max(np.abs(approx - target)))


def sidecar_report(tn: TaylorNet, measured_error: float = None) -> dict:
    """JSON-able companion report for a serialized network."""
    rep = report_complexity(tn)
    return {
        "spec": {
            "n_x": tn.spec.n_x,
            "k": tn.spec.k,
            "eps": tn.spec.eps,
            "N": tn.spec.N,
            "derivative_mode": tn.spec.derivative_mode,
            "fd_step": tn.spec.fd_step,
        },
        "derivative_bound": tn.derivative_bound,
        "depth": rep["depth"],
        "first_layer_constraints": rep["first_layer_constraints"],
        "first_layer_variables": rep["first_layer_variables"],
        "total_nodes": rep["total_nodes"],
        "analytic_bound": error_bound(tn.spec),
        "measured_grid_error": measured_error,
    }
