"""Exact sparse multivariate polynomials.

Used for closed-form derivative oracles of polynomial targets and as an
independent reference when checking finite-difference stencils.
"""

from __future__ import annotations

from math import factorial

import numpy as np

__all__ = ["Polynomial"]


class Polynomial:
    """Polynomial stored as {exponent tuple: coefficient}."""

    def __init__(self, n_vars: int, coeffs=None):
        self.n_vars = int(n_vars)
        self.coeffs = {}
        for expo, c in (coeffs or {}).items():
            expo = tuple(int(e) for e in expo)
            if len(expo) != self.n_vars:
                raise ValueError(f"exponent {expo} has wrong arity")
            if c != 0.0:
                self.coeffs[expo] = self.coeffs.get(expo, 0.0) + float(c)

    @staticmethod
    def constant(n_vars: int, value: float) -> "Polynomial":
        return Polynomial(n_vars, {(0,) * n_vars: value})

    @staticmethod
    def var(n_vars: int, i: int) -> "Polynomial":
        expo = [0] * n_vars
        expo[i] = 1
        return Polynomial(n_vars, {tuple(expo): 1.0})

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.n_vars, other)
        out = dict(self.coeffs)
        for e, c in other.coeffs.items():
            out[e] = out.get(e, 0.0) + c
        return Polynomial(self.n_vars, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.n_vars, {e: -c for e, c in self.coeffs.items()})

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.n_vars, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return Polynomial(self.n_vars, {e: c * other for e, c in self.coeffs.items()})
        out = {}
        for e1, c1 in self.coeffs.items():
            for e2, c2 in other.coeffs.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0.0) + c1 * c2
        return Polynomial(self.n_vars, out)

    __rmul__ = __mul__

    def __pow__(self, p: int):
        out = Polynomial.constant(self.n_vars, 1.0)
        for _ in range(int(p)):
            out = out * self
        return out

    def partial(self, axis: int) -> "Polynomial":
        out = {}
        for e, c in self.coeffs.items():
            if e[axis] == 0:
                continue
            ne = list(e)
            ne[axis] -= 1
            out[tuple(ne)] = out.get(tuple(ne), 0.0) + c * e[axis]
        return Polynomial(self.n_vars, out)

    def derivative(self, multi_index) -> "Polynomial":
        out = self
        for axis, order in enumerate(multi_index):
            for _ in range(int(order)):
                out = out.partial(axis)
        return out

    def degree(self) -> int:
        return max((sum(e) for e in self.coeffs), default=0)

    def taylor_coefficient(self, multi_index, center) -> float:
        """D^n p (center) / n!, computed exactly."""
        d = self.derivative(multi_index)(center)
        scale = 1.0
        for o in multi_index:
            scale *= factorial(int(o))
        return d / scale

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        total = 0.0
        for e, c in self.coeffs.items():
            total += c * np.prod([x[i] ** p for i, p in enumerate(e) if p], initial=1.0)
        return float(total)

    def eval_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        total = np.zeros(X.shape[0])
        for e, c in self.coeffs.items():
            term = np.full(X.shape[0], c)
            for i, p in enumerate(e):
                if p:
                    term = term * X[:, i] ** p
            total += term
        return total

    def __repr__(self):
        parts = [f"{c:+g}*x^{e}" for e, c in sorted(self.coeffs.items())]
        return "Polynomial(" + " ".join(parts or ["0"]) + ")"
