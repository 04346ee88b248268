"""Benchmark targets for the reconstruction sweeps.

Each target carries its evaluation domain, a batch oracle, and, where the
closed form permits, an exact derivative oracle for the grid compiler.  The
Trid objective follows the standard form sum (x_i - 1)^2 - sum x_i x_{i-1};
Alpine's sqrt factor is not smooth at zero, so its reconstruction domain is
shifted away from the axes and the shift is recorded on the target.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch
from .polynomials import Polynomial

__all__ = ["BenchmarkTarget", "get_target", "TARGET_NAMES"]


@dataclass(frozen=True)
class BenchmarkTarget:
    name: str
    dim: int
    domain_lo: np.ndarray
    domain_hi: np.ndarray
    fn: object                    # batch oracle (B, dim) -> (B,)
    deriv: object = None          # exact (multi_index, x) -> float, or None
    recon_lo: np.ndarray = None   # reconstruction domain when shifted
    recon_hi: np.ndarray = None
    notes: str = ""

    def __post_init__(self):
        if self.recon_lo is None:
            object.__setattr__(self, "recon_lo", self.domain_lo)
        if self.recon_hi is None:
            object.__setattr__(self, "recon_hi", self.domain_hi)

    def __call__(self, x) -> float:
        return float(self.fn(np.asarray(x, dtype=float)[None, :])[0])

    def eval_batch(self, X) -> np.ndarray:
        return self.fn(np.atleast_2d(np.asarray(X, dtype=float)))


def _alpine() -> BenchmarkTarget:
    def fn(X):
        return np.prod(np.sqrt(X) * np.sin(X), axis=1)

    return BenchmarkTarget(
        name="alpine", dim=2,
        domain_lo=np.zeros(2), domain_hi=np.full(2, 10.0),
        fn=fn,
        recon_lo=np.full(2, 0.1), recon_hi=np.full(2, 10.0),
        notes="reconstruction domain shifted to [0.1, 10] per axis; "
              "the sqrt factor is not smooth at 0",
    )


def _parsopoulos() -> BenchmarkTarget:
    def fn(X):
        return np.cos(X[:, 0]) ** 2 + np.sin(X[:, 1]) ** 2

    def deriv(n, x):
        n1, n2 = int(n[0]), int(n[1])
        if n1 and n2:
            return 0.0
        if n1 == 0 and n2 == 0:
            return float(np.cos(x[0]) ** 2 + np.sin(x[1]) ** 2)
        if n2 == 0:
            # cos^2 = (1 + cos 2x)/2
            return float(2.0 ** (n1 - 1) * np.cos(2 * x[0] + n1 * np.pi / 2))
        return float(-(2.0 ** (n2 - 1)) * np.cos(2 * x[1] + n2 * np.pi / 2))

    return BenchmarkTarget(
        name="parsopoulos", dim=2,
        domain_lo=np.full(2, -5.0), domain_hi=np.full(2, 5.0),
        fn=fn, deriv=deriv,
    )


def _trid_polynomial(dim: int = 2) -> Polynomial:
    p = Polynomial.constant(dim, 0.0)
    for i in range(dim):
        p = p + (Polynomial.var(dim, i) - 1.0) ** 2
    for i in range(1, dim):
        p = p - Polynomial.var(dim, i) * Polynomial.var(dim, i - 1)
    return p


def _trid() -> BenchmarkTarget:
    poly = _trid_polynomial(2)
    return BenchmarkTarget(
        name="trid", dim=2,
        domain_lo=np.full(2, -20.0), domain_hi=np.full(2, 20.0),
        fn=poly.eval_batch,
        deriv=lambda n, x: poly.derivative(n)(x),
        notes="standard Trid objective",
    )


def _powell_polynomial() -> Polynomial:
    x1, x2, x3, x4 = (Polynomial.var(4, i) for i in range(4))
    return ((x3 - 10.0 * x1) ** 2 + 5.0 * (x2 - x4) ** 2
            + (x1 - 2.0 * x2) ** 4 + 10.0 * (x3 - x4) ** 4)


def _powell() -> BenchmarkTarget:
    poly = _powell_polynomial()
    return BenchmarkTarget(
        name="powell", dim=4,
        domain_lo=np.full(4, -4.0), domain_hi=np.full(4, 5.0),
        fn=poly.eval_batch,
        deriv=lambda n, x: poly.derivative(n)(x),
    )


_FACTORIES = {
    "alpine": _alpine,
    "parsopoulos": _parsopoulos,
    "trid": _trid,
    "powell": _powell,
}

TARGET_NAMES = tuple(sorted(_FACTORIES))


def get_target(name: str) -> BenchmarkTarget:
    try:
        return _FACTORIES[name.lower()]()
    except KeyError:
        raise DimensionMismatch(
            f"unknown target {name!r}; choose from {TARGET_NAMES}") from None
