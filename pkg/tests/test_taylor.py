import numpy as np
import pytest

from optnets.errors import DimensionMismatch, OracleUnavailable
from optnets.gadgets import box_indicator_node
from optnets.network import INPUT, SolutionNetwork, evaluate_batch
from optnets.polynomials import Polynomial
from optnets.taylor import (
    TaylorGridSpec,
    build_taylor_net,
    central_difference,
    error_bound,
    grid_size,
    measured_grid_error,
    monomial_chain,
    multi_indices,
    nudge_into_grid,
    report_complexity,
    sidecar_report,
    taylor_coeffs,
)


class TestGridSize:
    def test_formula_cases(self):
        assert grid_size(2, 3, 0.01) == 6
        assert grid_size(1, 2, 0.5) == 1

    def test_ceiling_floor(self):
        # eps at least n_x^k / k! collapses the grid to one cell
        assert grid_size(2, 2, 2.0) == 1
        assert grid_size(3, 1, 3.0) == 1

    def test_matches_direct_formula(self):
        import math
        rng = np.random.default_rng(2)
        for _ in range(50):
            n_x = int(rng.integers(1, 4))
            k = int(rng.integers(1, 5))
            eps = float(rng.uniform(0.001, 1.0))
            expect = max(1, math.ceil(n_x * (1 / (math.factorial(k) * eps)) ** (1 / k)))
            assert grid_size(n_x, k, eps) == expect

    def test_invalid_inputs(self):
        with pytest.raises(DimensionMismatch):
            grid_size(0, 1, 0.1)
        with pytest.raises(DimensionMismatch):
            grid_size(1, 1, 0.0)


class TestMultiIndices:
    def test_count_is_binomial(self):
        from math import comb
        for n_x in (1, 2, 3):
            for k in (1, 2, 3, 4):
                assert len(multi_indices(n_x, k)) == comb(k + n_x, n_x)

    def test_ordering_is_graded(self):
        idx = multi_indices(2, 2)
        orders = [sum(t) for t in idx]
        assert orders == sorted(orders)


class TestTaylorCoeffs:
    def test_square_about_half(self):
        ct = taylor_coeffs(lambda x: x[0] ** 2, np.array([0.5]), 2, fd_step=0.05)
        assert ct.coeffs[(0,)] == pytest.approx(0.25, abs=1e-10)
        assert ct.coeffs[(1,)] == pytest.approx(1.0, abs=1e-10)
        assert ct.coeffs[(2,)] == pytest.approx(1.0, abs=1e-10)

    def test_sine_about_zero(self):
        ct = taylor_coeffs(lambda x: np.sin(x[0]), np.array([0.0]), 3, fd_step=1e-3)
        assert ct.coeffs[(0,)] == pytest.approx(0.0, abs=1e-8)
        assert ct.coeffs[(1,)] == pytest.approx(1.0, abs=1e-6)
        assert ct.coeffs[(2,)] == pytest.approx(0.0, abs=1e-7)
        assert ct.coeffs[(3,)] == pytest.approx(-1 / 6, abs=1e-4)

    def test_fd_matches_symbolic_differentiation_on_cubics(self):
        rng = np.random.default_rng(33)
        for trial in range(20):
            n_x = int(rng.integers(1, 4))
            poly = Polynomial.constant(n_x, 0.0)
            for e in multi_indices(n_x, 3):
                poly = poly + Polynomial(n_x, {tuple(e): rng.uniform(-1, 1)})
            center = rng.uniform(0.2, 0.8, size=n_x)
            ct = taylor_coeffs(lambda x: poly(x), center, 3, fd_step=0.05)
            for n in multi_indices(n_x, 3):
                expect = poly.taylor_coefficient(n, center)
                assert ct.coeffs[n] == pytest.approx(expect, abs=1e-6), (trial, n)

    def test_analytic_oracle_preferred(self):
        deriv = lambda n, x: {(0,): 2.0, (1,): 3.0, (2,): 4.0}[n]
        ct = taylor_coeffs(None, np.array([0.0]), 2, deriv=deriv)
        assert ct.coeffs[(2,)] == pytest.approx(2.0)  # 4 / 2!

    def test_missing_oracle_raises(self):
        with pytest.raises(OracleUnavailable):
            taylor_coeffs(None, np.array([0.0]), 2)


class TestCentralDifference:
    def test_mixed_partial_of_product(self):
        f = lambda x: x[0] ** 2 * x[1]
        got = central_difference(f, np.array([0.3, 0.7]), (1, 1), 0.05)
        assert got == pytest.approx(2 * 0.3, abs=1e-9)

    def test_fourth_order(self):
        f = lambda x: x[0] ** 4
        got = central_difference(f, np.array([0.5]), (4,), 0.05)
        assert got == pytest.approx(24.0, abs=1e-6)


class TestMonomialChain:
    def test_scalar_square(self):
        net = monomial_chain([0], (2,), 1)
        out = evaluate_batch(net, [[0.9]])[0, 0]
        assert out == pytest.approx(0.16, abs=1e-12)

    def test_bilinear(self):
        net = monomial_chain([0, 0], (1, 1), 1)
        out = evaluate_batch(net, [[0.9, 0.8]])[0, 0]
        assert out == pytest.approx(0.4 * 0.3, abs=1e-12)

    def test_low_order_rejected(self):
        with pytest.raises(DimensionMismatch):
            monomial_chain([0], (1,), 1)

    def test_random_monomials_match_direct_evaluation(self):
        rng = np.random.default_rng(44)
        for trial in range(30):
            n_x = int(rng.integers(1, 4))
            while True:
                n = tuple(int(v) for v in rng.integers(0, 4, size=n_x))
                if 2 <= sum(n) <= 4:
                    break
            N = int(rng.integers(1, 4))
            m = tuple(int(v) for v in rng.integers(0, N, size=n_x))
            net = monomial_chain(m, n, N)
            centers = (2 * np.asarray(m) + 1) / (2 * N)
            X = rng.uniform(0.0, 1.0, size=(1000, n_x))
            keep = np.all(np.abs(X - centers) > 1e-3, axis=1)
            X = X[keep]
            out = evaluate_batch(net, X)[:, 0]
            direct = np.prod((X - centers) ** np.asarray(n), axis=1)
            assert np.max(np.abs(out - direct)) <= 1e-8, (trial, n, m, N)

    def test_depth_bound_structural(self):
        rng = np.random.default_rng(45)
        for _ in range(20):
            n_x = int(rng.integers(1, 4))
            while True:
                n = tuple(int(v) for v in rng.integers(0, 5, size=n_x))
                if 2 <= sum(n) <= 4:
                    break
            net = monomial_chain([0] * n_x, n, 1)
            assert net.depth <= 2 * (sum(n) - 1)
            for node in net.nodes.values():
                assert node.program.n_z <= 1
                assert node.program.constraint_count <= 2


def sin2d(x):
    return np.sin(x[0] + x[1]) / 2.0


def sin2d_deriv(n, x):
    return np.sin(x[0] + x[1] + sum(n) * np.pi / 2.0) / 2.0


class TestBuildTaylorNet:
    def test_affine_target_reproduced_exactly(self):
        f = lambda x: 0.3 * x[0] - 0.1
        deriv = lambda n, x: {0: f(x), 1: 0.3}.get(sum(n), 0.0)
        spec = TaylorGridSpec.auto(1, 1, 0.5)
        tn = build_taylor_net(f, spec, deriv=deriv)
        rng = np.random.default_rng(55)
        X = rng.uniform(0.01, 0.99, size=(100, 1))
        out = tn.eval_batch(X)
        assert np.max(np.abs(out - (0.3 * X[:, 0] - 0.1))) <= 1e-8

    def test_quadratic_target_single_cell_exact(self):
        f = lambda x: (x[0] - 0.5) ** 2
        poly = (Polynomial.var(1, 0) - 0.5) ** 2
        deriv = lambda n, x: poly.derivative(n)(x)
        spec = TaylorGridSpec(n_x=1, k=2, eps=0.5, N=1)
        tn = build_taylor_net(f, spec, deriv=deriv)
        X = ((np.arange(100) + 0.5) / 100)[:, None]
        X = X[np.abs(X[:, 0] - 0.5) > 1e-6]
        out = tn.eval_batch(X)
        direct = (X[:, 0] - 0.5) ** 2
        assert np.max(np.abs(out - direct)) <= 1e-8

    def test_polynomial_targets_with_unit_grid_are_exact(self):
        rng = np.random.default_rng(56)
        for _ in range(5):
            k = int(rng.integers(2, 4))
            poly = Polynomial.constant(2, 0.0)
            for e in multi_indices(2, k):
                poly = poly + Polynomial(2, {tuple(e): rng.uniform(-0.2, 0.2)})
            deriv = lambda n, x: poly.derivative(n)(x)
            spec = TaylorGridSpec(n_x=2, k=k, eps=1.0, N=1)
            tn = build_taylor_net(lambda x: poly(x), spec, deriv=deriv)
            X = rng.uniform(0.02, 0.98, size=(200, 2))
            X = X[np.all(np.abs(X - 0.5) > 1e-4, axis=1)]
            out = tn.eval_batch(X)
            assert np.max(np.abs(out - poly.eval_batch(X))) <= 1e-8

    def test_smooth_target_within_bound(self):
        spec = TaylorGridSpec.auto(2, 3, 0.05)
        assert spec.N == 3
        tn = build_taylor_net(sin2d, spec, deriv=sin2d_deriv)
        err = measured_grid_error(tn, sin2d, points_per_axis=20)
        assert err <= 0.05

    def test_fd_mode_matches_analytic_mode(self):
        spec_a = TaylorGridSpec(n_x=1, k=2, eps=0.3, N=2, derivative_mode="analytic")
        spec_f = TaylorGridSpec(n_x=1, k=2, eps=0.3, N=2, derivative_mode="fd", fd_step=0.01)
        f = lambda x: np.cos(2 * x[0]) / 4
        deriv = lambda n, x: np.cos(2 * x[0] + sum(n) * np.pi / 2) * 2 ** sum(n) / 4
        ta = build_taylor_net(f, spec_a, deriv=deriv)
        tf = build_taylor_net(f, spec_f)
        X = np.linspace(0.055, 0.945, 38)[:, None]
        assert np.max(np.abs(ta.eval_batch(X) - tf.eval_batch(X))) <= 1e-4

    def test_derivative_bound_rescaling(self):
        # scale of 10: derivatives of g = 10*sin2d exceed 1, bound restores it
        g = lambda x: 10.0 * sin2d(x)
        gd = lambda n, x: 10.0 * sin2d_deriv(n, x)
        spec = TaylorGridSpec(n_x=2, k=2, eps=0.2, N=4)
        tn = build_taylor_net(g, spec, deriv=gd, derivative_bound=10.0)
        rng = np.random.default_rng(57)
        X = rng.uniform(0.05, 0.95, size=(100, 2))
        out = tn.eval_batch(X)
        direct = 10.0 * np.sin(X[:, 0] + X[:, 1]) / 2
        bound = 10.0 * error_bound(spec)
        assert np.max(np.abs(out - direct)) <= bound

    def test_nudge_handles_cell_faces(self):
        spec = TaylorGridSpec(n_x=1, k=2, eps=0.5, N=2)
        poly = (Polynomial.var(1, 0)) ** 2
        tn = build_taylor_net(lambda x: poly(x), spec,
                              deriv=lambda n, x: poly.derivative(n)(x))
        # 0.5 is the shared face of the two cells
        assert tn(np.array([0.5])) == pytest.approx(0.25, abs=1e-6)

    def test_missing_analytic_oracle_raises(self):
        spec = TaylorGridSpec(n_x=1, k=1, eps=0.5, N=1)
        with pytest.raises(OracleUnavailable):
            build_taylor_net(lambda x: x[0], spec)


class TestErrorBound:
    def test_formula_values(self):
        assert error_bound(TaylorGridSpec(n_x=1, k=2, eps=0.1, N=4)) == pytest.approx(1 / 32)
        got = error_bound(TaylorGridSpec(n_x=2, k=3, eps=0.1, N=6))
        assert got == pytest.approx((8 / 6) * 6 ** -3, rel=1e-12)

    def test_doubling_grid_divides_by_two_to_the_k(self):
        for k in (1, 2, 3):
            b1 = error_bound(TaylorGridSpec(n_x=2, k=k, eps=0.1, N=5))
            b2 = error_bound(TaylorGridSpec(n_x=2, k=k, eps=0.1, N=10))
            assert b1 / b2 == pytest.approx(2.0 ** k, rel=1e-12)


class TestComplexityReport:
    def test_one_dim_k2(self):
        spec = TaylorGridSpec.auto(1, 2, 0.5)
        assert spec.N == 1
        poly = (Polynomial.var(1, 0)) ** 2
        tn = build_taylor_net(lambda x: poly(x), spec,
                              deriv=lambda n, x: poly.derivative(n)(x))
        rep = report_complexity(tn)
        assert rep["first_layer_constraints"] == 10
        assert rep["first_layer_variables"] == 4
        assert rep["first_layer_constraints"] == rep["formula_first_layer_constraints"]
        assert rep["first_layer_variables"] == rep["formula_first_layer_variables"]
        assert rep["depth"] <= 4

    def test_two_dim_k2(self):
        spec = TaylorGridSpec(n_x=2, k=2, eps=1.0, N=1)
        f = lambda x: x[0] * x[1]
        poly = Polynomial.var(2, 0) * Polynomial.var(2, 1)
        tn = build_taylor_net(f, spec, deriv=lambda n, x: poly.derivative(n)(x))
        rep = report_complexity(tn)
        assert rep["first_layer_constraints"] == 18
        assert rep["first_layer_variables"] == 7

    def test_depth_never_exceeds_2k(self):
        rng = np.random.default_rng(66)
        for _ in range(6):
            n_x = int(rng.integers(1, 3))
            k = int(rng.integers(1, 4))
            N = int(rng.integers(1, 3))
            poly = Polynomial.constant(n_x, 0.0)
            for e in multi_indices(n_x, k):
                poly = poly + Polynomial(n_x, {tuple(e): rng.uniform(-0.1, 0.1)})
            spec = TaylorGridSpec(n_x=n_x, k=k, eps=0.5, N=N)
            tn = build_taylor_net(lambda x: poly(x), spec,
                                  deriv=lambda n, x: poly.derivative(n)(x))
            rep = report_complexity(tn)
            assert rep["depth"] <= 2 * k
            assert rep["first_layer_constraints"] == rep["formula_first_layer_constraints"]
            assert rep["first_layer_variables"] == rep["formula_first_layer_variables"]


class TestPartitionOfUnity:
    def test_indicators_sum_to_one_interior(self):
        N = 3
        net = SolutionNetwork(n_x=2)
        terms = []
        from itertools import product as iproduct
        for m in iproduct(range(N), repeat=2):
            node = box_indicator_node(m, N, node_id=f"I{m[0]}{m[1]}")
            net.add_node(node)
            net.connect(INPUT, node.id, "x")
            terms.append((node.id, [[1.0]]))
        net.add_output(terms)
        net.freeze()
        rng = np.random.default_rng(77)
        X = rng.uniform(0.001, 0.999, size=(500, 2))
        # stay off the faces
        X = X[np.all(np.abs(X * N - np.round(X * N)) > 1e-6, axis=1)]
        out = evaluate_batch(net, X)[:, 0]
        np.testing.assert_allclose(out, 1.0, atol=1e-12)


class TestNudge:
    def test_interior_points_unchanged(self):
        X = np.array([[0.3, 0.4]])
        Xn, moved = nudge_into_grid(X, 2)
        np.testing.assert_array_equal(X, Xn)
        assert not moved[0]

    def test_face_points_moved_up(self):
        Xn, moved = nudge_into_grid(np.array([[0.5]]), 2)
        assert moved[0]
        assert Xn[0, 0] > 0.5

    def test_boundary_clamped_inward(self):
        Xn, _ = nudge_into_grid(np.array([[0.0], [1.0]]), 2)
        assert Xn[0, 0] > 0.0
        assert Xn[1, 0] < 1.0


class TestSidecarReport:
    def test_report_is_json_serializable(self):
        import json
        spec = TaylorGridSpec.auto(1, 2, 0.5)
        poly = (Polynomial.var(1, 0)) ** 2
        tn = build_taylor_net(lambda x: poly(x), spec,
                              deriv=lambda n, x: poly.derivative(n)(x))
        rep = sidecar_report(tn, measured_error=1e-9)
        text = json.dumps(rep)
        assert json.loads(text)["analytic_bound"] == pytest.approx(0.5)
