"""Image reconstruction as an LP network over triangular partitions, plus
benchmark-function reconstruction sweeps.

Images are interpolated piecewise-affinely: every pixel-grid square is split
along its anti-diagonal into two triangles and each triangle carries the
affine function through its three corner values, so the interpolant matches
the source exactly at grid corners.  The network realization gates each
triangle's affine law by a polyhedral indicator through a switched-product
node and sums the gated values per channel.  Corner queries sit on triangle
edges, so evaluation nudges them inward deterministically first.

Constraint dropping removes a random subset of the indicator halfspace rows;
a triangle survives only if all of its rows survive, and pixels covered by
no surviving triangle fall back to the global mean color.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

import numpy as np

from .benchmarks import BenchmarkTarget
from .errors import ScaleExceeded, UnsupportedFormat
from .gadgets import polyhedral_indicator_node, switched_product_node
from .network import INPUT, SolutionNetwork, evaluate_batch
from .taylor import TaylorGridSpec, TaylorNet, build_taylor_net

__all__ = [
    "TriangularPWA",
    "ImageFit",
    "DropResult",
    "read_image",
    "write_image",
    "make_test_texture",
    "fit_image_pwa",
    "reconstruct_image",
    "drop_constraints",
    "SweepRow",
    "recon_testfn",
    "sweep_rows_to_csv",
]

CORNER_ETA = 1e-9
POWELL_N_CAP = 3


# ---------------------------------------------------------------------------
# PGM / PPM files (binary, 8-bit)
# ---------------------------------------------------------------------------

def _read_header_tokens(data: bytes, count: int):
    tokens = []
    pos = 2
    while len(tokens) < count:
        while pos < len(data) and data[pos: pos + 1].isspace():
            pos += 1
        if data[pos: pos + 1] == b"#":
            while pos < len(data) and data[pos: pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos: pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_image(path) -> np.ndarray:
    """Load an 8-bit PGM (P5) or PPM (P6) as floats in [0, 1], shape (H, W, C)."""
    data = open(path, "rb").read()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise UnsupportedFormat(f"unsupported magic {magic!r}; need P5 or P6")
    channels = 1 if magic == b"P5" else 3
    tokens, pos = _read_header_tokens(data, 3)
    width, height, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise UnsupportedFormat("only 8-bit images are supported")
    raw = np.frombuffer(data, dtype=np.uint8, count=width * height * channels,
                        offset=pos)
    return raw.reshape(height, width, channels).astype(float) / 255.0


def write_image(path, image: np.ndarray) -> None:
    """Write floats in [0, 1] of shape (H, W) or (H, W, C) as PGM/PPM."""
    image = np.asarray(image, dtype=float)
    if image.ndim == 2:
        image = image[:, :, None]
    H, W, C = image.shape
    if C not in (1, 3):
        raise UnsupportedFormat("images must have 1 or 3 channels")
    magic = b"P5" if C == 1 else b"P6"
    body = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(magic + b"\n" + f"{W} {H}\n255\n".encode())
        fh.write(body.tobytes())


def make_test_texture(size: int = 32) -> np.ndarray:
    """Deterministic grayscale texture, floats in [0, 1], shape (size, size, 1)."""
    i, j = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    u = j / (size - 1.0)
    v = i / (size - 1.0)
    t = (0.5 + 0.27 * np.sin(7.0 * u + 3.0 * v)
         + 0.18 * np.cos(11.0 * u * v + 2.0)
         + 0.05 * np.sin(23.0 * v))
    t = np.clip(t, 0.0, 1.0)
    # quantize like a real 8-bit source
    return (np.round(t * 255.0) / 255.0)[:, :, None]


# ---------------------------------------------------------------------------
# Triangular piecewise-affine fit
# ---------------------------------------------------------------------------

@dataclass
class TriangularPWA:
    """Per-triangle halfspaces and affine channel coefficients.

    Coordinates are (u, v) = (column, row) in pixel units.  Triangle t has
    halfspaces[t] @ (u, v) <= rhs[t] rowwise and channel values
    coeffs[t, c] @ (u, v, 1).
    """

    width: int
    height: int
    channels: int
    halfspaces: np.ndarray   # (T, 3, 2)
    rhs: np.ndarray          # (T, 3)
    coeffs: np.ndarray       # (T, C, 3)

    @property
    def n_triangles(self) -> int:
        return self.halfspaces.shape[0]

    def evaluate(self, points) -> np.ndarray:
        """Direct interpolation at (u, v) points, shape (B, C).

        Points on shared edges take the first matching triangle; use the
        same nudge as the network for corner queries.
        """
        P = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros((P.shape[0], self.channels))
        remaining = np.ones(P.shape[0], dtype=bool)
        for t in range(self.n_triangles):
            inside = remaining & np.all(
                P @ self.halfspaces[t].T - self.rhs[t] <= 1e-9, axis=1)
            if not np.any(inside):
                continue
            ones = np.column_stack([P[inside], np.ones(inside.sum())])
            out[inside] = ones @ self.coeffs[t].T
            remaining &= ~inside
        return out


@dataclass
class ImageFit:
    source: np.ndarray
    pwa: TriangularPWA
    network: SolutionNetwork
    triangle_nodes: list     # (indicator id, (gate ids per channel)) per triangle


def fit_image_pwa(image: np.ndarray) -> ImageFit:
    """Triangular interpolant of the image and its gated LP network.

    The image is (H, W), (H, W, 1) or (H, W, 3) with intensities in [0, 1];
    corners interpolate exactly, so reconstruction error at grid corners is
    zero up to the corner nudge.
    """
    image = np.asarray(image, dtype=float)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise UnsupportedFormat("image must be (H, W[, 1 or 3]) with floats in [0,1]")
    H, W, C = image.shape
    if H < 2 or W < 2:
        raise UnsupportedFormat("image must be at least 2x2")

    tris_h = []
    tris_b = []
    tris_c = []
    for i in range(H - 1):
        for j in range(W - 1):
            # lower triangle: (i,j), (i,j+1), (i+1,j); upper: the other three
            lower_pts = [(j, i), (j + 1, i), (j, i + 1)]
            upper_pts = [(j + 1, i + 1), (j + 1, i), (j, i + 1)]
            for pts, kind in ((lower_pts, "lower"), (upper_pts, "upper")):
                A = np.array([[p[0], p[1], 1.0] for p in pts])
                vals = np.array([image[p[1], p[0], :] for p in pts])  # (3, C)
                coef = np.linalg.solve(A, vals).T                      # (C, 3)
                if kind == "lower":
                    hs = np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]])
                    rh = np.array([-j, -i, i + j + 1.0])
                else:
                    hs = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])
                    rh = np.array([j + 1.0, i + 1.0, -(i + j + 1.0)])
                tris_h.append(hs)
                tris_b.append(rh)
                tris_c.append(coef)
    pwa = TriangularPWA(width=W, height=H, channels=C,
                        halfspaces=np.asarray(tris_h), rhs=np.asarray(tris_b),
                        coeffs=np.asarray(tris_c))
    network, triangle_nodes = _image_network(pwa)
    return ImageFit(source=image, pwa=pwa, network=network,
                    triangle_nodes=triangle_nodes)


def _image_network(pwa: TriangularPWA, keep_mask=None):
    """Gated network over the (optionally) surviving triangles."""
    net = SolutionNetwork(n_x=2)
    triangle_nodes = []
    terms_per_channel = [[] for _ in range(pwa.channels)]
    coverage_terms = []
    span = float(pwa.width + pwa.height)
    for t in range(pwa.n_triangles):
        if keep_mask is not None and not keep_mask[t]:
            triangle_nodes.append(None)
            continue
        ind = polyhedral_indicator_node(
            [(pwa.halfspaces[t][r], pwa.rhs[t][r]) for r in range(3)],
            node_id=f"T{t}",
        )
        net.add_node(ind)
        net.connect(INPUT, ind.id, "x")
        coverage_terms.append((ind.id, [[1.0]]))
        gate_ids = []
        for c in range(pwa.channels):
            a, b, off = pwa.coeffs[t, c]
            bound = abs(a) * span + abs(b) * span + abs(off) + 1.0
            gate = switched_product_node(bound, node_id=f"T{t}c{c}",
                                         value_sens=[[a, b]], value_offset=off)
            net.add_node(gate)
            net.connect(ind.id, gate.id, "gate")
            net.connect(INPUT, gate.id, "val")
            terms_per_channel[c].append((gate.id, [[1.0]]))
            gate_ids.append(gate.id)
        triangle_nodes.append((ind.id, tuple(gate_ids)))
    for c in range(pwa.channels):
        if terms_per_channel[c]:
            net.add_output(terms_per_channel[c])
        else:
            net.add_output([(INPUT, np.zeros((1, 2)))])
    if coverage_terms:
        net.add_output(coverage_terms)
    else:
        net.add_output([(INPUT, np.zeros((1, 2)))])
    return net.freeze(), triangle_nodes


def _corner_queries(W: int, H: int, eta: float = CORNER_ETA) -> np.ndarray:
    """Pixel-corner coordinates nudged off triangle edges, deterministically."""
    jj, ii = np.meshgrid(np.arange(W, dtype=float), np.arange(H, dtype=float))
    u = jj.ravel() + eta
    v = ii.ravel() + 2 * eta
    u = np.where(u > W - 1, W - 1 - eta, u)
    v = np.where(v > H - 1, H - 1 - 2 * eta, v)
    return np.column_stack([u, v])


def reconstruct_image(fit_or_net, W: int = None, H: int = None,
                      channels: int = None, mean_color=None):
    """Evaluate the gated network at every pixel corner.

    Returns (image (H, W, C), coverage (H, W)).  Pixels with zero coverage
    render as the mean color (used by the constraint-dropping sweep).
    """
    if isinstance(fit_or_net, ImageFit):
        net = fit_or_net.network
        H, W = fit_or_net.source.shape[:2]
        channels = fit_or_net.pwa.channels
        if mean_color is None:
            mean_color = fit_or_net.source.reshape(-1, channels).mean(axis=0)
    else:
        net = fit_or_net
    queries = _corner_queries(W, H)
    out = evaluate_batch(net, queries)
    values = out[:, :channels].reshape(H, W, channels)
    coverage = out[:, channels].reshape(H, W)
    if mean_color is not None:
        fallback = coverage < 0.5
        values[fallback] = np.asarray(mean_color, dtype=float)
    return values, coverage


def image_mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared error on [0, 1] intensities, averaged over channels."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 2:
        a = a[:, :, None]
    if b.ndim == 2:
        b = b[:, :, None]
    return float(np.mean((a - b) ** 2))


@dataclass
class DropResult:
    network: SolutionNetwork
    mse: float
    kept_rows: int
    total_rows: int
    live_triangles: int
    fallback_pixels: int


def drop_constraints(fit: ImageFit, fraction: float, seed: int) -> DropResult:
    """Keep a uniformly random ``fraction`` of the indicator halfspace rows.

    A triangle stays live only when all three of its rows are kept; the
    reduced network is re-evaluated and uncovered pixels fall back to the
    global mean color before the error is measured.
    """
    if not (0.0 < fraction <= 1.0):
        raise ValueError("fraction must lie in (0, 1]")
    T = fit.pwa.n_triangles
    total_rows = 3 * T
    rng = np.random.default_rng(seed)
    keep_count = int(round(fraction * total_rows))
    kept = rng.choice(total_rows, size=keep_count, replace=False)
    row_mask = np.zeros(total_rows, dtype=bool)
    row_mask[kept] = True
    tri_mask = row_mask.reshape(T, 3).all(axis=1)
    net, _ = _image_network(fit.pwa, keep_mask=tri_mask)
    H, W, C = fit.source.shape
    mean_color = fit.source.reshape(-1, C).mean(axis=0)
    recon, coverage = reconstruct_image(net, W=W, H=H, channels=C,
                                        mean_color=mean_color)
    return DropResult(
        network=net,
        mse=image_mse(recon, fit.source),
        kept_rows=keep_count,
        total_rows=total_rows,
        live_triangles=int(tri_mask.sum()),
        fallback_pixels=int((coverage < 0.5).sum()),
    )


# ---------------------------------------------------------------------------
# Benchmark-function sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    name: str
    k: int
    N: int
    mse: float
    build_seconds: float
    notes: str = ""


def _derivative_bound(target: BenchmarkTarget, k: int, lo, hi) -> float:
    """Loose max-derivative estimate of the domain-rescaled target."""
    width = hi - lo
    if target.deriv is None:
        # magnitude of values as a floor; fd compilation rescales gate bounds
        probe = _unit_probe(target.dim, 9)
        vals = target.eval_batch(lo + width * probe)
        return max(1.0, float(np.abs(vals).max()))
    from .taylor import multi_indices

    probe = _unit_probe(target.dim, 5)
    worst = 1.0
    for n in multi_indices(target.dim, k):
        scale = np.prod(width ** np.asarray(n, dtype=float))
        for u in probe:
            x = lo + width * u
            worst = max(worst, abs(target.deriv(n, x)) * scale)
    return 1.2 * worst


def _unit_probe(dim: int, per_axis: int) -> np.ndarray:
    axes = [(np.arange(per_axis) + 0.5) / per_axis] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def recon_testfn(target: BenchmarkTarget, k: int, N_list,
                 points_per_axis: int = None, n_cap: int = POWELL_N_CAP):
    """Reconstruction sweep: one compiled network per grid resolution N,
    with MSE on a fixed dense grid.  Returns a list of SweepRow."""
    dim = target.dim
    if dim >= 4:
        for N in N_list:
            if N > n_cap:
                raise ScaleExceeded(
                    f"{dim}-d sweeps are capped at N <= {n_cap}")
    ppa = points_per_axis or (100 if dim == 2 else 10)
    lo, hi = target.recon_lo, target.recon_hi
    width = hi - lo

    def g(u):
        return float(target.fn((lo + width * np.asarray(u))[None, :])[0])

    deriv_unit = None
    if target.deriv is not None:
        def deriv_unit(n, u):
            scale = float(np.prod(width ** np.asarray(n, dtype=float)))
            return target.deriv(n, lo + width * u) * scale

    bound = _derivative_bound(target, k, lo, hi)
    grid = _unit_probe(dim, ppa)
    X = lo + width * grid
    truth = target.eval_batch(X)

    rows = []
    for N in N_list:
        mode = "analytic" if deriv_unit is not None else "fd"
        spec = TaylorGridSpec(n_x=dim, k=k, eps=1.0, N=int(N),
                              derivative_mode=mode,
                              fd_step=1e-3 if mode == "fd" else None)
        start = time.perf_counter()
        tn = build_taylor_net(g, spec, deriv=deriv_unit, derivative_bound=bound)
        build_s = time.perf_counter() - start
        approx = tn.eval_batch(grid)
        mse = float(np.mean((approx - truth) ** 2))
        rows.append(SweepRow(name=target.name, k=k, N=int(N), mse=mse,
                             build_seconds=build_s, notes=target.notes))
    return rows


def sweep_rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["name", "k", "N", "mse", "build_seconds", "notes"])
    for r in rows:
        writer.writerow([r.name, r.k, r.N, f"{r.mse:.12g}",
                         f"{r.build_seconds:.6g}", r.notes])
    return buf.getvalue()
