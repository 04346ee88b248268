"""Closed-form LP node constructors: inverse, product, bumps, indicators,
epigraph max-affine nodes and their difference networks.

Each builder emits nodes whose coefficient blocks are affine in the input
slots, so every node passes the restricted-grammar validator.  Gadgets with
a singular set (the inverse and product families) carry a guard band of
width eta around it; evaluation inside the band raises DomainBoundary
instead of returning an arbitrary optimum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .lp_core import (
    AffineCoeff,
    BilinearConstraintTemplate,
    BilinearTerm,
    validate_dpp,
)
from .network import (
    INPUT,
    AffineBlock,
    Guard,
    NetEdge,
    NetNode,
    ParamProgram,
    SolutionNetwork,
)

__all__ = [
    "SINGULAR_ETA",
    "MaxAffineFunction",
    "MaxAffinePair",
    "inverse_node",
    "product_subnet",
    "bump_node",
    "multi_bump_node",
    "box_indicator_node",
    "polyhedral_indicator_node",
    "affine_value_node",
    "switched_product_node",
    "maxaffine_to_lp",
    "dc_difference_net",
    "maxaffine_lemma_counts",
    "difference_lemma_counts",
    "program_templates",
    "node_dpp_report",
]

SINGULAR_ETA = 1e-9


# ---------------------------------------------------------------------------
# Max-affine functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MaxAffineFunction:
    """h(x) = max_k planes[k] @ x + offsets[k]."""

    planes: np.ndarray      # (K, n_x)
    offsets: np.ndarray     # (K,)
    lipschitz_budget: float = None

    def __post_init__(self):
        planes = np.atleast_2d(np.asarray(self.planes, dtype=float))
        offsets = np.atleast_1d(np.asarray(self.offsets, dtype=float))
        if planes.shape[0] != offsets.shape[0] or planes.shape[0] < 1:
            raise DimensionMismatch("need one offset per plane and at least one plane")
        if self.lipschitz_budget is not None:
            if np.abs(planes).max() > self.lipschitz_budget + 1e-12:
                raise DimensionMismatch("plane slopes exceed the Lipschitz budget")
        object.__setattr__(self, "planes", planes)
        object.__setattr__(self, "offsets", offsets)

    @property
    def n_planes(self) -> int:
        return self.planes.shape[0]

    @property
    def n_x(self) -> int:
        return self.planes.shape[1]

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.max(self.planes @ x + self.offsets))

    def eval_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.max(X @ self.planes.T + self.offsets, axis=1)


@dataclass(frozen=True)
class MaxAffinePair:
    """Difference representation h1 - h2 of two max-affine functions."""

    h1: MaxAffineFunction
    h2: MaxAffineFunction

    def __post_init__(self):
        if self.h1.n_x != self.h2.n_x:
            raise DimensionMismatch("both components must share the input dimension")

    @property
    def n_x(self) -> int:
        return self.h1.n_x

    def __call__(self, x) -> float:
        return self.h1(x) - self.h2(x)

    def eval_batch(self, X) -> np.ndarray:
        return self.h1.eval_batch(X) - self.h2.eval_batch(X)


# ---------------------------------------------------------------------------
# Scalar gadget nodes
# ---------------------------------------------------------------------------

def inverse_node(a1: float = 0.0, a2: float = 0.0, node_id: str = "inverse") -> NetNode:
    """LP node computing (x2 - a2) / (x1 - a1).

    min -z  s.t.  (x1-a1) z <= x2-a2  and  (x1-a1) z >= x2-a2; the equality
    pair pins z regardless of the sign of x1-a1.  Singular at x1 = a1.
    """
    program = ParamProgram(
        n_z=1,
        slots={"x1": 1, "x2": 1},
        cost=AffineBlock(base=np.array([-1.0])),
        ineq_lhs=AffineBlock(base=np.array([[-a1], [a1]]),
                             sens={"x1": np.array([[[1.0]], [[-1.0]]])}),
        ineq_rhs=AffineBlock(base=np.array([-a2, a2]),
                             sens={"x2": np.array([[1.0], [-1.0]])}),
    )
    guard = Guard(terms={"x1": np.array([1.0])}, offset=-a1, eta=SINGULAR_ETA)
    return NetNode(id=node_id, program=program, guards=(guard,))


def _reciprocal_node(a1: float, node_id: str, one_sided: bool) -> NetNode:
    if one_sided:
        lhs = AffineBlock(base=np.array([[-a1]]), sens={"u": np.array([[[1.0]]])})
        rhs = AffineBlock(base=np.array([1.0]))
    else:
        lhs = AffineBlock(base=np.array([[-a1], [a1]]),
                          sens={"u": np.array([[[1.0]], [[-1.0]]])})
        rhs = AffineBlock(base=np.array([1.0, -1.0]))
    program = ParamProgram(
        n_z=1, slots={"u": 1},
        cost=AffineBlock(base=np.array([-1.0])),
        ineq_lhs=lhs, ineq_rhs=rhs,
    )
    guard = Guard(terms={"u": np.array([1.0])}, offset=-a1, eta=SINGULAR_ETA)
    return NetNode(id=node_id, program=program, guards=(guard,))


def _divide_node(a2: float, node_id: str, one_sided: bool) -> NetNode:
    """z with (v) z == w - a2 pinned by an inequality pair (or <= only)."""
    if one_sided:
        lhs = AffineBlock(base=np.array([[0.0]]), sens={"v": np.array([[[1.0]]])})
        rhs = AffineBlock(base=np.array([-a2]), sens={"w": np.array([[1.0]])})
    else:
        lhs = AffineBlock(base=np.zeros((2, 1)),
                          sens={"v": np.array([[[1.0]], [[-1.0]]])})
        rhs = AffineBlock(base=np.array([-a2, a2]),
                          sens={"w": np.array([[1.0], [-1.0]])})
    program = ParamProgram(
        n_z=1, slots={"v": 1, "w": 1},
        cost=AffineBlock(base=np.array([-1.0])),
        ineq_lhs=lhs, ineq_rhs=rhs,
    )
    return NetNode(id=node_id, program=program)


def product_subnet(a1: float = 0.0, a2: float = 0.0, *,
                   one_sided: bool = False) -> SolutionNetwork:
    """Two chained LP nodes computing (x1 - a1) * (x2 - a2).

    The first node pins z1 = 1/(x1-a1); the second pins z2 with
    z1 * z2 == x2 - a2.  With the default equality pairs the construction is
    exact for either sign of the factors; the one-sided variant keeps only
    the <= rows and is valid on (0, 1]^2 shifted by (a1, a2).
    """
    net = SolutionNetwork(n_x=2)
    net.add_node(_reciprocal_node(a1, "recip", one_sided))
    net.add_node(_divide_node(a2, "scale", one_sided))
    net.connect(INPUT, "recip", "u", matrix=[[1.0, 0.0]])
    net.connect("recip", "scale", "v")
    net.connect(INPUT, "scale", "w", matrix=[[0.0, 1.0]])
    net.add_output([("scale", [[1.0]])])
    return net.freeze()


def bump_node(node_id: str = "bump") -> NetNode:
    """LP node computing 1 if |x| <= 1 else 0.

    min -z over z in [0,1] s.t. (x-1) z <= 0 and (x+1) z >= 0.  The output
    is exactly 0 or 1 everywhere on the real line.
    """
    program = ParamProgram(
        n_z=1, slots={"x": 1},
        cost=AffineBlock(base=np.array([-1.0])),
        ineq_lhs=AffineBlock(base=np.array([[-1.0], [-1.0]]),
                             sens={"x": np.array([[[1.0]], [[-1.0]]])}),
        ineq_rhs=AffineBlock(base=np.zeros(2)),
        lower=[0.0], upper=[1.0],
    )
    return NetNode(id=node_id, program=program)


def multi_bump_node(intervals, node_id: str = "multibump") -> NetNode:
    """Node computing 1 if x lies in the union of closed intervals, else 0.

    One bounded variable and one constraint pair per interval; the output
    selector sums the per-interval indicators.  Overlapping or touching
    intervals are merged first so the sum stays in {0, 1}.
    """
    ivals = sorted((float(a), float(b)) for a, b in intervals)
    if not ivals or any(a > b for a, b in ivals):
        raise DimensionMismatch("intervals must be nonempty with a_i <= b_i")
    merged = [list(ivals[0])]
    for a, b in ivals[1:]:
        if a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    k = len(merged)
    lhs_base = np.zeros((2 * k, k))
    lhs_sens = np.zeros((2 * k, k, 1))
    for i, (a, b) in enumerate(merged):
        # (x - b) z_i <= 0  and  -(x - a) z_i <= 0
        lhs_base[2 * i, i] = -b
        lhs_sens[2 * i, i, 0] = 1.0
        lhs_base[2 * i + 1, i] = a
        lhs_sens[2 * i + 1, i, 0] = -1.0
    program = ParamProgram(
        n_z=k, slots={"x": 1},
        cost=AffineBlock(base=-np.ones(k)),
        ineq_lhs=AffineBlock(base=lhs_base, sens={"x": lhs_sens}),
        ineq_rhs=AffineBlock(base=np.zeros(2 * k)),
        lower=np.zeros(k), upper=np.ones(k),
    )
    return NetNode(id=node_id, program=program,
                   selector=(np.ones((1, k)), np.zeros(1)))


def box_indicator_node(m, N: int, node_id: str = None) -> NetNode:
    """Indicator of the closed grid cell with index m on an N^n_x partition
    of the unit cube: 1 iff |x_i - (2 m_i + 1)/(2N)| <= 1/(2N) for every i.

    One variable in [0,1] and 2 n_x gating rows, so 2 n_x + 2 constraints.
    """
    m = np.asarray(m, dtype=int)
    n_x = m.shape[0]
    if N < 1 or np.any(m < 0) or np.any(m >= N):
        raise DimensionMismatch("cell index must lie in {0..N-1}^n_x with N >= 1")
    lhs_base = np.zeros((2 * n_x, 1))
    lhs_sens = np.zeros((2 * n_x, 1, n_x))
    for i in range(n_x):
        # (x_i - (m_i+1)/N) z <= 0  and  -(x_i - m_i/N) z <= 0
        lhs_base[2 * i, 0] = -(m[i] + 1) / N
        lhs_sens[2 * i, 0, i] = 1.0
        lhs_base[2 * i + 1, 0] = m[i] / N
        lhs_sens[2 * i + 1, 0, i] = -1.0
    program = ParamProgram(
        n_z=1, slots={"x": n_x},
        cost=AffineBlock(base=np.array([-1.0])),
        ineq_lhs=AffineBlock(base=lhs_base, sens={"x": lhs_sens}),
        ineq_rhs=AffineBlock(base=np.zeros(2 * n_x)),
        lower=[0.0], upper=[1.0],
    )
    return NetNode(id=node_id or f"cell{'_'.join(map(str, m))}", program=program)


def polyhedral_indicator_node(halfspaces, node_id: str = "poly") -> NetNode:
    """Indicator of the polyhedron {x : a_j @ x <= b_j for all j}.

    min -z over z in [0,1] s.t. (a_j @ x - b_j) z <= 0; the optimum is 1
    inside the polyhedron and 0 outside.
    """
    rows = [(np.atleast_1d(np.asarray(a, dtype=float)), float(b)) for a, b in halfspaces]
    if not rows:
        raise DimensionMismatch("need at least one halfspace")
    n_x = rows[0][0].shape[0]
    J = len(rows)
    lhs_base = np.zeros((J, 1))
    lhs_sens = np.zeros((J, 1, n_x))
    for j, (a, b) in enumerate(rows):
        lhs_base[j, 0] = -b
        lhs_sens[j, 0, :] = a
    program = ParamProgram(
        n_z=1, slots={"x": n_x},
        cost=AffineBlock(base=np.array([-1.0])),
        ineq_lhs=AffineBlock(base=lhs_base, sens={"x": lhs_sens}),
        ineq_rhs=AffineBlock(base=np.zeros(J)),
        lower=[0.0], upper=[1.0],
    )
    return NetNode(id=node_id, program=program)


def affine_value_node(coeffs, offset: float, node_id: str = "affine") -> NetNode:
    """Node whose single variable is pinned to coeffs @ x + offset.

    Realized by the inequality pair z <= c@x+q, z >= c@x+q; one variable and
    two constraints.
    """
    c = np.atleast_1d(np.asarray(coeffs, dtype=float))
    n_x = c.shape[0]
    program = ParamProgram(
        n_z=1, slots={"x": n_x},
        cost=AffineBlock(base=np.array([-1.0])),
        ineq_lhs=AffineBlock(base=np.array([[1.0], [-1.0]])),
        ineq_rhs=AffineBlock(base=np.array([offset, -offset]),
                             sens={"x": np.vstack([c, -c])}),
    )
    return NetNode(id=node_id, program=program)


def switched_product_node(bound: float, node_id: str = "switch",
                          value_sens=None, value_offset: float = 0.0) -> NetNode:
    """Node computing gate * value exactly for gate in {0, 1}.

    max z  s.t.  z <= M*gate,  -z <= M*gate,  z <= value + M*(1-gate)
    with M = bound >= sup |value|.  When the gate is 0 the first pair pins
    z = 0; when it is 1 the third row pins z = value.  Three constraints and
    one variable, and no singular set, so gating by indicator outputs is
    safe everywhere.

    ``value_sens`` optionally reads the value as a weighted sum of a
    vector-valued slot, value = value_sens @ val + value_offset.
    """
    M = float(bound)
    if M <= 0:
        raise DimensionMismatch("bound must be positive")
    vsens = np.ones((1, 1)) if value_sens is None else np.atleast_2d(np.asarray(value_sens, dtype=float))
    value_dim = vsens.shape[1]
    program = ParamProgram(
        n_z=1, slots={"gate": 1, "val": value_dim},
        cost=AffineBlock(base=np.array([-1.0])),
        ineq_lhs=AffineBlock(base=np.array([[1.0], [-1.0], [1.0]])),
        ineq_rhs=AffineBlock(
            base=np.array([0.0, 0.0, M + value_offset]),
            sens={"gate": np.array([[M], [M], [-M]]),
                  "val": np.vstack([np.zeros((2, value_dim)), vsens])},
        ),
    )
    return NetNode(id=node_id, program=program)


# ---------------------------------------------------------------------------
# Max-affine epigraph nodes
# ---------------------------------------------------------------------------

def maxaffine_to_lp(h: MaxAffineFunction, node_id: str = "maxaffine") -> NetNode:
    """Epigraph node: min t s.t. p_k @ x + q_k <= t for every plane.

    The node itself has one variable and K rows; the classical count that
    treats the input coordinates as variables is K constraints and n_x + 1
    variables, reported by maxaffine_lemma_counts.
    """
    K, n_x = h.planes.shape
    program = ParamProgram(
        n_z=1, slots={"x": n_x},
        cost=AffineBlock(base=np.array([1.0])),
        ineq_lhs=AffineBlock(base=-np.ones((K, 1))),
        ineq_rhs=AffineBlock(base=-h.offsets, sens={"x": -h.planes}),
    )
    return NetNode(id=node_id, program=program)


def maxaffine_lemma_counts(h: MaxAffineFunction) -> dict:
    return {"constraints": h.n_planes, "variables": h.n_x + 1}


def difference_lemma_counts(pair: MaxAffinePair) -> dict:
    """Single-LP counts for the difference form, alongside the one-layer
    figure that counts only n_x + 1 variables.  Both are reported; the
    emitted network below realizes the difference as an affine read-out of
    two epigraph nodes instead."""
    K = max(pair.h1.n_planes, pair.h2.n_planes)
    return {
        "constraints": 2 * K + 1,
        "variables": pair.n_x + 3,
        "single_layer_variables": pair.n_x + 1,
    }


def dc_difference_net(pair: MaxAffinePair) -> SolutionNetwork:
    """Network computing h1(x) - h2(x) via two epigraph nodes and a
    difference read-out."""
    net = SolutionNetwork(n_x=pair.n_x)
    net.add_node(maxaffine_to_lp(pair.h1, node_id="pos"))
    net.add_node(maxaffine_to_lp(pair.h2, node_id="neg"))
    net.connect(INPUT, "pos", "x")
    net.connect(INPUT, "neg", "x")
    net.add_output([("pos", [[1.0]]), ("neg", [[-1.0]])])
    return net.freeze()


# ---------------------------------------------------------------------------
# Restricted-grammar bridge
# ---------------------------------------------------------------------------

def _slot_entry_names(slots):
    names = []
    for s, d in slots.items():
        names.extend(f"{s}[{i}]" for i in range(d))
    return names


def _coeff_expr(base, sens_entries):
    linear = {}
    for name, w in sens_entries:
        if w != 0.0:
            linear[name] = linear.get(name, 0.0) + float(w)
    return AffineCoeff(constant=float(base), linear=tuple(sorted(linear.items())))


def _row_template(lhs_block, rhs_block, row, n_z, relation):
    terms = []
    for j in range(n_z):
        entries = []
        for s, T in lhs_block.sens.items():
            for k in range(T.shape[-1]):
                entries.append((f"{s}[{k}]", T[row, j, k]))
        coeff = _coeff_expr(lhs_block.base[row, j], entries)
        if coeff.constant == 0.0 and not coeff.linear:
            continue
        terms.append(BilinearTerm(coeff=coeff, factor=f"z[{j}]"))
    entries = []
    for s, T in rhs_block.sens.items():
        for k in range(T.shape[-1]):
            entries.append((f"{s}[{k}]", T[row, k]))
    rhs = _coeff_expr(rhs_block.base[row], entries)
    return BilinearConstraintTemplate(terms=tuple(terms), relation=relation, rhs=rhs)


def program_templates(program: ParamProgram):
    """Lower a ParamProgram to constraint templates for validate_dpp.

    Returns (templates, objective, parameters, variables); parameters are
    the flattened slot entries, variables the program's primal coordinates.
    """
    params = _slot_entry_names(program.slots)
    variables = [f"z[{j}]" for j in range(program.n_z)]
    templates = []
    for i in range(program.m1):
        templates.append(_row_template(program.ineq_lhs, program.ineq_rhs,
                                       i, program.n_z, "<="))
    for i in range(program.m2):
        templates.append(_row_template(program.eq_lhs, program.eq_rhs,
                                       i, program.n_z, "="))
    obj_terms = []
    for j in range(program.n_z):
        entries = []
        for s, T in program.cost.sens.items():
            for k in range(T.shape[-1]):
                entries.append((f"{s}[{k}]", T[j, k]))
        coeff = _coeff_expr(program.cost.base[j], entries)
        if coeff.constant == 0.0 and not coeff.linear:
            continue
        obj_terms.append(BilinearTerm(coeff=coeff, factor=f"z[{j}]"))
    if program.is_qp:
        # constant curvature block: parameter-free quadratic atom
        obj_terms.append(BilinearTerm(coeff=AffineCoeff(constant=0.5), factor="quad(z)"))
    objective = BilinearConstraintTemplate(terms=tuple(obj_terms), relation="<=")
    return templates, objective, params, variables


def node_dpp_report(node: NetNode):
    """Validate a node's program against the restricted bilinear grammar."""
    templates, objective, params, variables = program_templates(node.program)
    return validate_dpp(templates, objective=objective,
                        parameters=params, variables=variables)
