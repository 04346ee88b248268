"""Directed-acyclic networks whose nodes are argmin maps of parametric programs.

A node holds a ParamProgram: every coefficient block (cost, constraint
matrices, right-hand sides) is an affine function of named slots.  Slots are
fed either by incoming edges (each edge applies an affine map to the source
node's output) or by stored parameter values.  Evaluating the network
instantiates and solves each node's program in topological order; node
outputs are affine images of the primal solutions, and network outputs are
affine combinations of node outputs.

Networks are frozen before use.  A frozen network is immutable and its
evaluation is re-entrant, so concurrent calls are safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    DomainBoundary,
    IncompatibleBounds,
    NodeInfeasible,
    NodeUnbounded,
    SchemaViolation,
)
from .lp_core import (
    DEFAULT_OPTIONS,
    LinearProgram,
    QuadraticProgram,
    SolverOptions,
    Status,
    solve_lp,
    solve_qp,
)

__all__ = [
    "INPUT",
    "AffineBlock",
    "ParamProgram",
    "Guard",
    "NetNode",
    "NetEdge",
    "OutputSpec",
    "SolutionNetwork",
    "WidthReport",
    "evaluate",
    "evaluate_batch",
    "concatenate",
    "widths",
    "serialize",
    "deserialize",
    "to_json",
    "from_json",
]

INPUT = "$input"
FORMAT_VERSION = "optnet/1"


def _arr(x, shape=None):
    a = np.asarray(x, dtype=float)
    if shape is not None and a.shape != tuple(shape):
        raise DimensionMismatch(f"expected shape {tuple(shape)}, got {a.shape}")
    return a


@dataclass
class AffineBlock:
    """value(slots) = base + sum_s sens[s] @ slots[s], affine in every slot."""

    base: np.ndarray
    sens: dict = field(default_factory=dict)

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=float)
        self.sens = {k: np.asarray(v, dtype=float) for k, v in self.sens.items()}
        for name, T in self.sens.items():
            if T.shape[:-1] != self.base.shape:
                raise DimensionMismatch(
                    f"sensitivity for slot {name!r} has shape {T.shape}, "
                    f"expected {self.base.shape} + (slot_dim,)")

    def value(self, slot_values) -> np.ndarray:
        out = self.base
        for name, T in self.sens.items():
            out = out + T @ slot_values[name]
        return out.copy() if out is self.base else out

    def value_batch(self, slot_values, batch: int) -> np.ndarray:
        """slot_values maps name -> (batch, slot_dim); returns (batch,) + base.shape."""
        out = np.broadcast_to(self.base, (batch,) + self.base.shape).copy()
        for name, T in self.sens.items():
            V = slot_values[name]
            if T.ndim == 2:
                out += V @ T.T
            else:
                out += np.einsum("mnd,bd->bmn", T, V)
        return out


def _const_block(value) -> AffineBlock:
    return AffineBlock(base=np.asarray(value, dtype=float))


@dataclass
class ParamProgram:
    """Program template whose coefficients are affine in named slots.

    ``slots`` maps slot names to dimensions.  ``param_values`` stores values
    for the trainable-parameter slots; the remaining slots are input slots
    and must be fed by edges.  Instantiating all slots yields a dense
    LinearProgram (or QuadraticProgram when a quadratic block is present).
    """

    n_z: int
    slots: dict = field(default_factory=dict)
    cost: AffineBlock = None
    ineq_lhs: AffineBlock = None
    ineq_rhs: AffineBlock = None
    eq_lhs: AffineBlock = None
    eq_rhs: AffineBlock = None
    quadratic: AffineBlock = None
    lower: np.ndarray = None
    upper: np.ndarray = None
    param_values: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.n_z
        if self.cost is None:
            self.cost = _const_block(np.zeros(n))
        if self.ineq_lhs is None:
            self.ineq_lhs = _const_block(np.zeros((0, n)))
        if self.ineq_rhs is None:
            self.ineq_rhs = _const_block(np.zeros(0))
        if self.eq_lhs is None:
            self.eq_lhs = _const_block(np.zeros((0, n)))
        if self.eq_rhs is None:
            self.eq_rhs = _const_block(np.zeros(0))
        for attr in ("ineq_lhs", "eq_lhs"):
            blk = getattr(self, attr)
            if blk.base.size == 0 and blk.base.ndim != 2:
                setattr(self, attr, AffineBlock(base=np.zeros((0, n)), sens=blk.sens))
        self.lower = np.full(n, -np.inf) if self.lower is None else _arr(self.lower, (n,))
        self.upper = np.full(n, np.inf) if self.upper is None else _arr(self.upper, (n,))
        self.param_values = {k: np.atleast_1d(np.asarray(v, dtype=float))
                             for k, v in self.param_values.items()}
        if self.ineq_lhs.base.shape != (self.m1, n):
            raise DimensionMismatch("ineq_lhs/ineq_rhs row counts differ")
        if self.eq_lhs.base.shape != (self.m2, n):
            raise DimensionMismatch("eq_lhs/eq_rhs row counts differ")

    @property
    def m1(self) -> int:
        return self.ineq_rhs.base.shape[0]

    @property
    def m2(self) -> int:
        return self.eq_rhs.base.shape[0]

    @property
    def is_qp(self) -> bool:
        return self.quadratic is not None

    @property
    def input_slots(self) -> tuple:
        return tuple(s for s in self.slots if s not in self.param_values)

    @property
    def constraint_count(self) -> int:
        return int(self.m1 + self.m2
                   + np.isfinite(self.lower).sum() + np.isfinite(self.upper).sum())

    def instantiate(self, slot_values) -> LinearProgram:
        vals = dict(self.param_values)
        vals.update(slot_values)
        missing = [s for s in self.slots if s not in vals]
        if missing:
            raise DimensionMismatch(f"unfed slots: {missing}")
        kwargs = dict(
            cost=self.cost.value(vals),
            ineq_lhs=self.ineq_lhs.value(vals),
            ineq_rhs=self.ineq_rhs.value(vals),
            eq_lhs=self.eq_lhs.value(vals),
            eq_rhs=self.eq_rhs.value(vals),
            lower=self.lower,
            upper=self.upper,
        )
        if self.is_qp:
            return QuadraticProgram(quadratic=self.quadratic.value(vals), **kwargs)
        return LinearProgram(**kwargs)

    def check_affine(self, rng=None, trials: int = 3, tol: float = 1e-9) -> bool:
        """Two-point linearity probe over every slot."""
        rng = rng or np.random.default_rng(0)
        blocks = [self.cost, self.ineq_lhs, self.ineq_rhs, self.eq_lhs, self.eq_rhs]
        if self.is_qp:
            blocks.append(self.quadratic)
        for _ in range(trials):
            v1 = {s: rng.uniform(-1, 1, size=d) for s, d in self.slots.items()}
            v2 = {s: rng.uniform(-1, 1, size=d) for s, d in self.slots.items()}
            t = rng.uniform(0.1, 0.9)
            vm = {s: t * v1[s] + (1 - t) * v2[s] for s in self.slots}
            for blk in blocks:
                lhs = blk.value(vm)
                rhs = t * blk.value(v1) + (1 - t) * blk.value(v2)
                if np.max(np.abs(lhs - rhs), initial=0.0) > tol:
                    return False
        return True


@dataclass
class Guard:
    """Raise DomainBoundary when |offset + sum_s terms[s] @ slots[s]| <= eta."""

    terms: dict
    offset: float = 0.0
    eta: float = 1e-9

    def violated(self, slot_values) -> bool:
        g = self.offset
        for name, vec in self.terms.items():
            g += float(np.asarray(vec) @ slot_values[name])
        return abs(g) <= self.eta

    def values_batch(self, slot_values, batch: int) -> np.ndarray:
        g = np.full(batch, self.offset)
        for name, vec in self.terms.items():
            g = g + slot_values[name] @ np.asarray(vec)
        return g


@dataclass
class NetNode:
    id: str
    program: ParamProgram
    selector: tuple = None   # (matrix (n_out, n_z), offset (n_out,))
    guards: tuple = ()

    def __post_init__(self):
        if self.selector is None:
            self.selector = (np.eye(self.program.n_z), np.zeros(self.program.n_z))
        S, off = self.selector
        S = np.atleast_2d(np.asarray(S, dtype=float))
        off = np.atleast_1d(np.asarray(off, dtype=float))
        if S.shape[1] != self.program.n_z or off.shape[0] != S.shape[0]:
            raise DimensionMismatch(f"selector shape mismatch on node {self.id!r}")
        self.selector = (S, off)
        self.guards = tuple(self.guards)

    @property
    def out_dim(self) -> int:
        return self.selector[0].shape[0]


@dataclass
class NetEdge:
    src: str
    dst: str
    slot: str
    matrix: np.ndarray
    offset: np.ndarray = None

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if self.offset is None:
            self.offset = np.zeros(self.matrix.shape[0])
        self.offset = np.atleast_1d(np.asarray(self.offset, dtype=float))


@dataclass
class OutputSpec:
    """Affine combination  offset + sum_i matrices[i] @ value(src_ids[i])."""

    terms: list   # list of (src_id, matrix)
    offset: np.ndarray

    def __post_init__(self):
        self.terms = [(src, np.atleast_2d(np.asarray(M, dtype=float))) for src, M in self.terms]
        self.offset = np.atleast_1d(np.asarray(self.offset, dtype=float))

    @property
    def dim(self) -> int:
        return self.offset.shape[0]


class SolutionNetwork:
    """DAG of solution-function nodes with affine edges and affine read-outs."""

    def __init__(self, n_x: int):
        self.n_x = int(n_x)
        self.nodes: dict = {}
        self.edges: list = []
        self.outputs: list = []
        self._frozen = False
        self._order = None
        self._layers = None
        self._in_edges = None

    # -- construction ------------------------------------------------------

    def add_node(self, node: NetNode) -> NetNode:
        self._mutable()
        if node.id in self.nodes or node.id == INPUT:
            raise SchemaViolation(f"duplicate node id {node.id!r}")
        self.nodes[node.id] = node
        return node

    def add_edge(self, edge: NetEdge) -> NetEdge:
        self._mutable()
        self.edges.append(edge)
        return edge

    def connect(self, src: str, dst: str, slot: str, matrix=None, offset=None) -> NetEdge:
        """Convenience wrapper; the default map is the identity."""
        src_dim = self.n_x if src == INPUT else self.nodes[src].out_dim
        slot_dim = self.nodes[dst].program.slots[slot]
        if matrix is None:
            if src_dim != slot_dim:
                raise DimensionMismatch(
                    f"edge {src!r}->{dst!r}:{slot} needs an explicit map "
                    f"({src_dim} -> {slot_dim})")
            matrix = np.eye(src_dim)
        return self.add_edge(NetEdge(src=src, dst=dst, slot=slot, matrix=matrix, offset=offset))

    def add_output(self, terms, offset=None) -> OutputSpec:
        self._mutable()
        terms = [(src, M) for src, M in terms]
        dim = np.atleast_2d(np.asarray(terms[0][1])).shape[0] if terms else 1
        spec = OutputSpec(terms=terms, offset=np.zeros(dim) if offset is None else offset)
        self.outputs.append(spec)
        return spec

    def _mutable(self):
        if self._frozen:
            raise SchemaViolation("network is frozen")

    # -- validation and structure -------------------------------------------

    def freeze(self) -> "SolutionNetwork":
        if self._frozen:
            return self
        fed = {}
        for e in self.edges:
            if e.dst not in self.nodes:
                raise SchemaViolation(f"edge targets unknown node {e.dst!r}")
            if e.src != INPUT and e.src not in self.nodes:
                raise SchemaViolation(f"edge from unknown node {e.src!r}")
            prog = self.nodes[e.dst].program
            if e.slot not in prog.slots:
                raise SchemaViolation(f"node {e.dst!r} has no slot {e.slot!r}")
            if e.slot in prog.param_values:
                raise SchemaViolation(f"slot {e.slot!r} of {e.dst!r} is a stored parameter")
            key = (e.dst, e.slot)
            if key in fed:
                raise SchemaViolation(f"slot {e.slot!r} of {e.dst!r} fed twice")
            fed[key] = e
            src_dim = self.n_x if e.src == INPUT else self.nodes[e.src].out_dim
            if e.matrix.shape != (prog.slots[e.slot], src_dim):
                raise SchemaViolation(
                    f"edge {e.src!r}->{e.dst!r}:{e.slot} map has shape {e.matrix.shape}, "
                    f"expected {(prog.slots[e.slot], src_dim)}")
        for node in self.nodes.values():
            for s in node.program.input_slots:
                if (node.id, s) not in fed:
                    raise SchemaViolation(f"slot {s!r} of node {node.id!r} is unfed")
        for spec in self.outputs:
            for src, M in spec.terms:
                if src != INPUT and src not in self.nodes:
                    raise SchemaViolation(f"output reads unknown node {src!r}")
                src_dim = self.n_x if src == INPUT else self.nodes[src].out_dim
                if M.shape != (spec.dim, src_dim):
                    raise SchemaViolation(
                        f"output term for {src!r} has shape {M.shape}, "
                        f"expected {(spec.dim, src_dim)}")

        # Kahn topological order; remaining nodes mean a cycle
        preds = {nid: set() for nid in self.nodes}
        succs = {nid: set() for nid in self.nodes}
        for e in self.edges:
            if e.src != INPUT:
                preds[e.dst].add(e.src)
                succs[e.src].add(e.dst)
        order = [nid for nid in self.nodes if not preds[nid]]
        seen = set(order)
        queue = list(order)
        while queue:
            nid = queue.pop(0)
            for nxt in sorted(succs[nid]):
                if nxt in seen:
                    continue
                if preds[nxt] <= seen:
                    seen.add(nxt)
                    order.append(nxt)
                    queue.append(nxt)
        if len(order) != len(self.nodes):
            raise SchemaViolation("network graph contains a cycle")

        layers = {nid: 1 for nid in self.nodes}
        in_edges = {nid: [] for nid in self.nodes}
        for e in self.edges:
            in_edges[e.dst].append(e)
        for nid in order:
            hop = 1
            for e in in_edges[nid]:
                if e.src != INPUT:
                    hop = max(hop, layers[e.src] + 1)
            layers[nid] = hop
        self._order = order
        self._layers = layers
        self._in_edges = in_edges
        self._frozen = True
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    def layer_of(self, node_id: str) -> int:
        self.freeze()
        return self._layers[node_id]

    @property
    def depth(self) -> int:
        self.freeze()
        return max(self._layers.values(), default=0)

    @property
    def out_dim(self) -> int:
        return sum(spec.dim for spec in self.outputs)


@dataclass(frozen=True)
class WidthReport:
    v_widths: tuple
    c_widths: tuple
    depth: int

    @property
    def max_v_width(self):
        return max(self.v_widths, default=0)

    @property
    def max_c_width(self):
        return max(self.c_widths, default=0)


def widths(net: SolutionNetwork) -> WidthReport:
    """Per-layer variable and constraint widths; bounds count as constraints."""
    net.freeze()
    L = net.depth
    wv = [0] * L
    wc = [0] * L
    for nid, node in net.nodes.items():
        j = net._layers[nid] - 1
        wv[j] += node.program.n_z
        wc[j] += node.program.constraint_count
    return WidthReport(v_widths=tuple(wv), c_widths=tuple(wc), depth=L)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _node_slot_values(net, node, values):
    slot_values = {}
    for e in net._in_edges[node.id]:
        src_val = values[e.src]
        slot_values[e.slot] = e.matrix @ src_val + e.offset
    return slot_values


def evaluate(net: SolutionNetwork, x, options: SolverOptions = None) -> np.ndarray:
    """Solve every node in topological order and apply the output read-outs.

    Raises NodeInfeasible/NodeUnbounded when an instantiated program leaves
    the construction's validity domain, and DomainBoundary when a guard band
    around a singular set is hit.
    """
    net.freeze()
    opts = options or DEFAULT_OPTIONS
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (net.n_x,):
        raise DimensionMismatch(f"input must have shape ({net.n_x},), got {x.shape}")
    values = {INPUT: x}
    for nid in net._order:
        node = net.nodes[nid]
        slot_values = _node_slot_values(net, node, values)
        for guard in node.guards:
            merged = dict(node.program.param_values)
            merged.update(slot_values)
            if guard.violated(merged):
                raise DomainBoundary(f"node {nid!r}: input within guard band")
        prog = node.program.instantiate(slot_values)
        res = solve_qp(prog, opts) if node.program.is_qp else solve_lp(prog, opts)
        if res.status is Status.INFEASIBLE:
            raise NodeInfeasible(nid)
        if res.status is Status.UNBOUNDED:
            raise NodeUnbounded(nid)
        S, off = node.selector
        values[nid] = S @ res.primal + off
    outs = []
    for spec in net.outputs:
        acc = spec.offset.copy()
        for src, M in spec.terms:
            acc = acc + M @ values[src]
        outs.append(acc)
    return np.concatenate(outs) if outs else np.zeros(0)


def _solve_scalar_lp_batch(c, a, b, lo, hi, opts):
    """Closed-form batch solve of  min c*z  s.t.  a[:,i] z <= b[:,i], lo<=z<=hi.

    Follows the same conventions as the simplex path: when the objective is
    flat the lexicographically smallest (lowest) finite endpoint is returned.
    Returns (z, status) with status 0 optimal, 1 infeasible, 2 unbounded.
    """
    B = c.shape[0]
    tolz = opts.pivot_tol
    pos = a > tolz
    neg = a < -tolz
    zer = ~(pos | neg)
    ratio = np.where(pos | neg, b / np.where(zer, 1.0, a), np.nan)
    U = np.minimum(np.min(np.where(pos, ratio, np.inf), axis=1, initial=np.inf), hi)
    L = np.maximum(np.max(np.where(neg, ratio, -np.inf), axis=1, initial=-np.inf), lo)
    feas_rows = np.all(~zer | (b >= -opts.feas_tol), axis=1)
    width_ok = L <= U + opts.feas_tol * (1.0 + np.abs(U))
    status = np.zeros(B, dtype=np.int8)
    status[~(feas_rows & width_ok)] = 1
    z = np.zeros(B)
    minimize_up = c < -opts.dual_tol
    minimize_dn = c > opts.dual_tol
    flat = ~(minimize_up | minimize_dn)
    z = np.where(minimize_up, U, z)
    z = np.where(minimize_dn, L, z)
    z = np.where(flat, np.where(np.isfinite(L), L, np.where(np.isfinite(U), U, 0.0)), z)
    unb = (minimize_up & ~np.isfinite(U)) | (minimize_dn & ~np.isfinite(L))
    status = np.where((status == 0) & unb, 2, status)
    # clamp the roundoff case L slightly above U for degenerate equality pairs
    z = np.where((status == 0) & (z > U), U, z)
    z = np.where((status == 0) & (z < L) & np.isfinite(L), L, z)
    return z, status


def evaluate_batch(net: SolutionNetwork, X, options: SolverOptions = None) -> np.ndarray:
    """Vectorized evaluate over the rows of X.

    Nodes that are LPs in a single variable are solved in closed form over
    the whole batch; anything else falls back to per-row solves.  Agrees
    with evaluate() within solver tolerance at every input.
    """
    net.freeze()
    opts = options or DEFAULT_OPTIONS
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != net.n_x:
        raise DimensionMismatch(f"inputs must have {net.n_x} columns")
    B = X.shape[0]
    values = {INPUT: X}
    for nid in net._order:
        node = net.nodes[nid]
        prog = node.program
        slot_values = {}
        for e in net._in_edges[nid]:
            slot_values[e.slot] = values[e.src] @ e.matrix.T + e.offset
        merged = dict(slot_values)
        for name, val in prog.param_values.items():
            merged[name] = np.broadcast_to(val, (B, val.shape[0]))
        for guard in node.guards:
            g = guard.values_batch(merged, B)
            if np.any(np.abs(g) <= guard.eta):
                bad = int(np.flatnonzero(np.abs(g) <= guard.eta)[0])
                raise DomainBoundary(f"node {nid!r}: input row {bad} within guard band")
        if not prog.is_qp and prog.n_z == 1:
            cost = prog.cost.value_batch(merged, B)[:, 0]
            a1 = prog.ineq_lhs.value_batch(merged, B)[:, :, 0]
            b1 = prog.ineq_rhs.value_batch(merged, B)
            if prog.m2:
                a2 = prog.eq_lhs.value_batch(merged, B)[:, :, 0]
                b2 = prog.eq_rhs.value_batch(merged, B)
                a1 = np.concatenate([a1, a2, -a2], axis=1)
                b1 = np.concatenate([b1, b2, -b2], axis=1)
            z, status = _solve_scalar_lp_batch(
                cost, a1, b1, float(prog.lower[0]), float(prog.upper[0]), opts)
            if np.any(status == 1):
                raise NodeInfeasible(nid, f"node {nid!r}: infeasible at "
                                          f"row {int(np.flatnonzero(status == 1)[0])}")
            if np.any(status == 2):
                raise NodeUnbounded(nid, f"node {nid!r}: unbounded at "
                                         f"row {int(np.flatnonzero(status == 2)[0])}")
            primal = z[:, None]
        else:
            primal = np.empty((B, prog.n_z))
            for r in range(B):
                inst = prog.instantiate({k: v[r] for k, v in slot_values.items()})
                res = solve_qp(inst, opts) if prog.is_qp else solve_lp(inst, opts)
                if res.status is Status.INFEASIBLE:
                    raise NodeInfeasible(nid)
                if res.status is Status.UNBOUNDED:
                    raise NodeUnbounded(nid)
                primal[r] = res.primal
        S, off = node.selector
        values[nid] = primal @ S.T + off
    outs = []
    for spec in net.outputs:
        acc = np.broadcast_to(spec.offset, (B, spec.dim)).copy()
        for src, M in spec.terms:
            acc += values[src] @ M.T
        outs.append(acc)
    return np.concatenate(outs, axis=1) if outs else np.zeros((B, 0))


# ---------------------------------------------------------------------------
# Concatenation
# ---------------------------------------------------------------------------

def _shift_block(block: AffineBlock, rows, cols, row_off, col_off, rename, is_matrix):
    """Place a block into a larger zero block, renaming slot names."""
    if is_matrix:
        base = np.zeros((rows, cols))
        base[row_off:row_off + block.base.shape[0],
             col_off:col_off + block.base.shape[1]] = block.base
        sens = {}
        for name, T in block.sens.items():
            big = np.zeros((rows, cols, T.shape[-1]))
            big[row_off:row_off + T.shape[0], col_off:col_off + T.shape[1], :] = T
            sens[rename[name]] = big
    else:
        base = np.zeros(rows)
        base[row_off:row_off + block.base.shape[0]] = block.base
        sens = {}
        for name, T in block.sens.items():
            big = np.zeros((rows, T.shape[-1]))
            big[row_off:row_off + T.shape[0], :] = T
            sens[rename[name]] = big
    return AffineBlock(base=base, sens=sens)


def _merge_blocks(parts):
    base = parts[0].base
    sens = dict(parts[0].sens)
    for p in parts[1:]:
        base = base + p.base
        for name, T in p.sens.items():
            sens[name] = sens.get(name, 0) + T
    return AffineBlock(base=base, sens=sens)


def concatenate(nodes) -> NetNode:
    """Merge solution-function nodes into one node computing the stacked map.

    The programs are stacked block-diagonally, so variable and constraint
    counts add up exactly and evaluation equals the stacked evaluation of
    the originals.  All nodes must be LPs, or all strictly convex QPs; a mix
    would make the merged quadratic term singular.
    """
    nodes = list(nodes)
    if not nodes:
        raise ValueError("need at least one node")
    if len(nodes) == 1:
        return nodes[0]
    kinds = {n.program.is_qp for n in nodes}
    if len(kinds) > 1:
        raise IncompatibleBounds("cannot merge LP nodes with QP nodes")
    is_qp = nodes[0].program.is_qp
    n_total = sum(n.program.n_z for n in nodes)
    m1_total = sum(n.program.m1 for n in nodes)
    m2_total = sum(n.program.m2 for n in nodes)

    renames = []
    slots = {}
    param_values = {}
    for node in nodes:
        rn = {}
        for s, d in node.program.slots.items():
            rn[s] = f"{node.id}.{s}"
            slots[rn[s]] = d
        for s, v in node.program.param_values.items():
            param_values[rn[s]] = v
        renames.append(rn)

    cost_parts, il_parts, ir_parts, el_parts, er_parts, q_parts = [], [], [], [], [], []
    row1 = row2 = col = 0
    lower = np.concatenate([n.program.lower for n in nodes])
    upper = np.concatenate([n.program.upper for n in nodes])
    for node, rn in zip(nodes, renames):
        p = node.program
        cost_parts.append(_shift_block(p.cost, n_total, None, col, None, rn, False))
        il_parts.append(_shift_block(p.ineq_lhs, m1_total, n_total, row1, col, rn, True))
        ir_parts.append(_shift_block(p.ineq_rhs, m1_total, None, row1, None, rn, False))
        el_parts.append(_shift_block(p.eq_lhs, m2_total, n_total, row2, col, rn, True))
        er_parts.append(_shift_block(p.eq_rhs, m2_total, None, row2, None, rn, False))
        if is_qp:
            q_parts.append(_shift_block(p.quadratic, n_total, n_total, col, col, rn, True))
        row1 += p.m1
        row2 += p.m2
        col += p.n_z

    out_total = sum(n.out_dim for n in nodes)
    S = np.zeros((out_total, n_total))
    off = np.zeros(out_total)
    r = c = 0
    guards = []
    for node, rn in zip(nodes, renames):
        Sn, offn = node.selector
        S[r:r + node.out_dim, c:c + node.program.n_z] = Sn
        off[r:r + node.out_dim] = offn
        for g in node.guards:
            guards.append(Guard(terms={rn[s]: v for s, v in g.terms.items()},
                                offset=g.offset, eta=g.eta))
        r += node.out_dim
        c += node.program.n_z

    program = ParamProgram(
        n_z=n_total,
        slots=slots,
        cost=_merge_blocks(cost_parts),
        ineq_lhs=_merge_blocks(il_parts),
        ineq_rhs=_merge_blocks(ir_parts),
        eq_lhs=_merge_blocks(el_parts),
        eq_rhs=_merge_blocks(er_parts),
        quadratic=_merge_blocks(q_parts) if is_qp else None,
        lower=lower,
        upper=upper,
        param_values=param_values,
    )
    return NetNode(id="+".join(n.id for n in nodes), program=program,
                   selector=(S, off), guards=tuple(guards))


# ---------------------------------------------------------------------------
# Serialization (format "optnet/1")
# ---------------------------------------------------------------------------

def _bound_list(v):
    return [None if not np.isfinite(x) else float(x) for x in v]


def _bound_arr(lst, fill):
    return np.asarray([fill if x is None else float(x) for x in lst])


def _block_doc(block):
    return {"base": block.base.tolist(),
            "sens": {k: v.tolist() for k, v in block.sens.items()}}


def _block_from(doc):
    return AffineBlock(base=np.asarray(doc["base"], dtype=float),
                       sens={k: np.asarray(v, dtype=float) for k, v in doc["sens"].items()})


def serialize(net: SolutionNetwork) -> dict:
    net.freeze()
    doc = {
        "version": FORMAT_VERSION,
        "n_x": net.n_x,
        "nodes": [],
        "edges": [],
        "outputs": [],
    }
    for node in net.nodes.values():
        p = node.program
        nd = {
            "id": node.id,
            "n_z": p.n_z,
            "slots": dict(p.slots),
            "cost": _block_doc(p.cost),
            "ineq_lhs": _block_doc(p.ineq_lhs),
            "ineq_rhs": _block_doc(p.ineq_rhs),
            "eq_lhs": _block_doc(p.eq_lhs),
            "eq_rhs": _block_doc(p.eq_rhs),
            "lower": _bound_list(p.lower),
            "upper": _bound_list(p.upper),
            "params": {k: v.tolist() for k, v in p.param_values.items()},
            "selector": {"matrix": node.selector[0].tolist(),
                         "offset": node.selector[1].tolist()},
            "guards": [{"terms": {k: np.asarray(v).tolist() for k, v in g.terms.items()},
                        "offset": g.offset, "eta": g.eta} for g in node.guards],
        }
        if p.is_qp:
            nd["quadratic"] = _block_doc(p.quadratic)
        doc["nodes"].append(nd)
    for e in net.edges:
        doc["edges"].append({"src": e.src, "dst": e.dst, "slot": e.slot,
                             "matrix": e.matrix.tolist(), "offset": e.offset.tolist()})
    for spec in net.outputs:
        doc["outputs"].append({
            "terms": [{"src": src, "matrix": M.tolist()} for src, M in spec.terms],
            "offset": spec.offset.tolist(),
        })
    return doc


def deserialize(doc: dict) -> SolutionNetwork:
    if not isinstance(doc, dict) or doc.get("version") != FORMAT_VERSION:
        raise SchemaViolation(f"expected a {FORMAT_VERSION!r} document")
    try:
        net = SolutionNetwork(n_x=int(doc["n_x"]))
        for nd in doc["nodes"]:
            program = ParamProgram(
                n_z=int(nd["n_z"]),
                slots={k: int(v) for k, v in nd["slots"].items()},
                cost=_block_from(nd["cost"]),
                ineq_lhs=_block_from(nd["ineq_lhs"]),
                ineq_rhs=_block_from(nd["ineq_rhs"]),
                eq_lhs=_block_from(nd["eq_lhs"]),
                eq_rhs=_block_from(nd["eq_rhs"]),
                quadratic=_block_from(nd["quadratic"]) if "quadratic" in nd else None,
                lower=_bound_arr(nd["lower"], -np.inf),
                upper=_bound_arr(nd["upper"], np.inf),
                param_values={k: np.asarray(v, dtype=float) for k, v in nd["params"].items()},
            )
            guards = tuple(
                Guard(terms={k: np.asarray(v, dtype=float) for k, v in g["terms"].items()},
                      offset=float(g["offset"]), eta=float(g["eta"]))
                for g in nd.get("guards", ()))
            net.add_node(NetNode(
                id=nd["id"], program=program,
                selector=(np.asarray(nd["selector"]["matrix"], dtype=float),
                          np.asarray(nd["selector"]["offset"], dtype=float)),
                guards=guards))
        for ed in doc["edges"]:
            net.add_edge(NetEdge(src=ed["src"], dst=ed["dst"], slot=ed["slot"],
                                 matrix=np.asarray(ed["matrix"], dtype=float),
                                 offset=np.asarray(ed["offset"], dtype=float)))
        for od in doc["outputs"]:
            net.add_output(terms=[(t["src"], np.asarray(t["matrix"], dtype=float))
                                  for t in od["terms"]],
                           offset=np.asarray(od["offset"], dtype=float))
    except (KeyError, TypeError, ValueError, DimensionMismatch) as exc:
        raise SchemaViolation(f"malformed network document: {exc}") from exc
    return net.freeze()


def to_json(net: SolutionNetwork) -> str:
    import json

    return json.dumps(serialize(net))


def from_json(text: str) -> SolutionNetwork:
    import json

    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"invalid JSON: {exc}") from exc
    return deserialize(doc)
