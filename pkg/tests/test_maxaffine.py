import numpy as np
import pytest

from optnets.errors import BudgetExhausted, CurvatureTooSmall, ScaleExceeded
from optnets.maxaffine import (
    anchor_net,
    dc_split,
    emit_lp,
    fit_from_json,
    fit_maxaffine,
    fit_to_json,
    plane_budget,
)
from optnets.network import evaluate_batch


class TestDcSplit:
    def test_convex_target_needs_no_curvature(self):
        split = dc_split(lambda x: float(x[0] ** 2), rho=0.0, n_x=1)
        xs = np.linspace(0, 1, 11)
        for x in xs:
            assert split.phi2(np.array([x])) == 0.0
            assert split.phi1(np.array([x])) == pytest.approx(x ** 2)

    def test_concave_target_splits_into_zero_and_square(self):
        split = dc_split(lambda x: float(-x[0] ** 2), rho=2.0, n_x=1)
        for x in np.linspace(0, 1, 11):
            assert split.phi1(np.array([x])) == pytest.approx(0.0, abs=1e-12)
            assert split.phi2(np.array([x])) == pytest.approx(x ** 2)

    def test_difference_reproduces_target(self):
        f = lambda x: float(np.sin(3 * x[0]))
        split = dc_split(f, rho=9.0, n_x=1)
        rng = np.random.default_rng(1)
        for x in rng.uniform(0, 1, size=1000):
            xv = np.array([x])
            assert split(xv) == pytest.approx(f(xv), abs=1e-12)

    def test_insufficient_curvature_rejected(self):
        with pytest.raises(CurvatureTooSmall):
            dc_split(lambda x: float(-10 * x[0] ** 2), rho=0.5, n_x=1)

    def test_negative_rho_rejected(self):
        with pytest.raises(CurvatureTooSmall):
            dc_split(lambda x: float(x[0]), rho=-1.0, n_x=1)


class TestPlaneBudget:
    def test_formula_one_dim(self):
        b = plane_budget(1, 1.0, 0.01)
        assert b.k_star == 120
        assert b.t_star == pytest.approx(0.5)

    def test_budget_floor(self):
        assert plane_budget(1, 1.0, 144.0).k_star == 1

    def test_two_dim_formula(self):
        # (0.01 / 288)^(-1) = 28800 by direct arithmetic
        b = plane_budget(2, 1.0, 0.01)
        assert b.k_star == 28800


class TestAnchorNet:
    def test_linear_component_covers_with_translated_samples(self):
        # constant gradient: images are a translation, cover mirrors the box
        phi = lambda x: float(2.0 * x[0])
        grad = lambda x: np.array([2.0])
        net = anchor_net(phi, grad, t=0.5, eps=0.01, budget=256, n_x=1)
        assert net.cover_radius <= 0.1

    def test_quadratic_images_span_expanded_interval(self):
        phi = lambda x: float(0.5 * x[0] ** 2)
        grad = lambda x: x.astype(float)
        net = anchor_net(phi, grad, t=0.5, eps=0.01, budget=512, n_x=1)
        # images x + 0.5 x span [0, 1.5]
        assert net.images.min() >= -1e-9
        assert net.images.max() <= 1.5 + 1e-9
        assert net.cover_radius <= 0.1

    def test_cover_property_on_fresh_samples(self):
        phi = lambda x: float(0.5 * x[0] ** 2)
        grad = lambda x: x.astype(float)
        eps = 0.01
        net = anchor_net(phi, grad, t=0.5, eps=eps, budget=512, n_x=1)
        rng = np.random.default_rng(7)
        fresh = rng.uniform(0, 1, size=(10000, 1))
        images = fresh + 0.5 * fresh
        dists = np.min(np.linalg.norm(images[:, None, :] - net.images[None, :, :],
                                      axis=2), axis=1)
        # fresh points sit within the verified radius plus sampling slack
        assert dists.max() <= np.sqrt(eps) + 1e-3

    def test_budget_exhaustion_reports_radius(self):
        phi = lambda x: float(0.5 * x[0] ** 2)
        grad = lambda x: x.astype(float)
        with pytest.raises(BudgetExhausted) as err:
            anchor_net(phi, grad, t=0.5, eps=1e-8, budget=4, n_x=1)
        assert err.value.achieved_radius > np.sqrt(1e-8)


class TestFitMaxAffine:
    def test_affine_target_single_plane(self):
        fit = fit_maxaffine(lambda x: float(0.7 * x[0] - 0.2), eps=1e-6, n_x=1, rho=0.0)
        assert fit.certificate <= 1e-6

    def test_convex_quadratic_tangent_gap(self):
        fit = fit_maxaffine(lambda x: float(x[0] ** 2), eps=0.01, n_x=1, rho=0.0,
                            grad=lambda x: 2.0 * x)
        K = fit.plane_counts[0]
        # uniform tangents would give gap ~ 1/(4 K^2); greedy is comparable
        assert fit.certificate <= 1.0 / (4.0 * K ** 2) * 12.0
        assert fit.certificate <= 0.01

    def test_sine_target_certified(self):
        f = lambda x: float(np.sin(3 * x[0]))
        fit = fit_maxaffine(f, eps=0.05, n_x=1, rho=9.0,
                            grad=lambda x: 3.0 * np.cos(3.0 * x))
        assert fit.certificate <= 0.05
        assert max(fit.plane_counts) <= plane_budget(1, fit.lipschitz, 0.05).k_star

    def test_tangent_planes_lower_bound_components(self):
        f = lambda x: float(np.sin(3 * x[0]))
        fit = fit_maxaffine(f, eps=0.05, n_x=1, rho=9.0,
                            grad=lambda x: 3.0 * np.cos(3.0 * x))
        rng = np.random.default_rng(3)
        X = rng.uniform(0, 1, size=(10000, 1))
        rho = fit.rho
        phi1 = np.array([np.sin(3 * x[0]) + 0.5 * rho * x[0] ** 2 for x in X])
        phi2 = 0.5 * rho * X[:, 0] ** 2
        assert np.max(fit.pair.h1.eval_batch(X) - phi1) <= 1e-10
        assert np.max(fit.pair.h2.eval_batch(X) - phi2) <= 1e-10

    def test_certificate_is_exact_grid_max(self):
        f = lambda x: float(np.sin(3 * x[0]))
        fit = fit_maxaffine(f, eps=0.05, n_x=1, rho=9.0,
                            grad=lambda x: 3.0 * np.cos(3.0 * x))
        C = np.linspace(0, 1, fit.grid_points)[:, None]
        direct = np.max(np.abs(fit.pair.eval_batch(C)
                               - np.array([f(x) for x in C])))
        assert fit.certificate == pytest.approx(direct, abs=0.0)

    def test_monotone_improvement_under_budget_doubling(self):
        f = lambda x: float(np.sin(3 * x[0]))
        grad = lambda x: 3.0 * np.cos(3.0 * x)
        errs = []
        for budget in (16, 32, 64, 128):
            try:
                fit = fit_maxaffine(f, eps=1e-6, n_x=1, rho=9.0, grad=grad,
                                    budget=budget)
                errs.append(fit.certificate)
            except BudgetExhausted as err:
                errs.append(err.achieved_radius)
        assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))

    def test_two_dim_target(self):
        f = lambda x: float(np.sin(2 * x[0]) * x[1])
        fit = fit_maxaffine(f, eps=0.2, n_x=2)
        assert fit.certificate <= 0.2

    def test_translation_equivariance(self):
        f = lambda x: float(np.sin(3 * x[0]))
        g = lambda x: float(np.sin(3 * (x[0] - 1.0)))
        fit0 = fit_maxaffine(f, eps=0.05, n_x=1, rho=9.0)
        fit1 = fit_maxaffine(g, eps=0.05, n_x=1, rho=9.0, domain=(1.0, 2.0))
        xs = np.linspace(0.0, 1.0, 257)[:, None]
        a = fit0.pair.eval_batch(xs)
        b = fit1.pair.eval_batch(xs + 1.0)
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_cap_refusal(self):
        with pytest.raises(ScaleExceeded):
            fit_maxaffine(lambda x: float(x[0] ** 2), eps=1e-9, n_x=2,
                          rho=0.0, k_cap=1000)


class TestEmit:
    def test_network_matches_pair(self):
        f = lambda x: float(np.sin(3 * x[0]))
        fit = fit_maxaffine(f, eps=0.05, n_x=1, rho=9.0,
                            grad=lambda x: 3.0 * np.cos(3.0 * x))
        report = emit_lp(fit.pair)
        X = np.linspace(0, 1, 1000)[:, None]
        net_vals = evaluate_batch(report.network, X)[:, 0]
        np.testing.assert_allclose(net_vals, fit.pair.eval_batch(X), atol=1e-9)

    def test_reported_counts(self):
        from optnets.gadgets import MaxAffineFunction, MaxAffinePair

        pair = MaxAffinePair(
            MaxAffineFunction(planes=np.zeros((2, 1)), offsets=np.zeros(2)),
            MaxAffineFunction(planes=np.zeros((2, 1)), offsets=np.zeros(2)),
        )
        rep = emit_lp(pair)
        assert rep.counts["constraints"] == 5
        assert rep.counts["variables"] == 4
        assert rep.counts["single_layer_variables"] == 2

    def test_fit_document_round_trip(self):
        f = lambda x: float(np.sin(3 * x[0]))
        fit = fit_maxaffine(f, eps=0.05, n_x=1, rho=9.0,
                            grad=lambda x: 3.0 * np.cos(3.0 * x))
        pair = fit_from_json(fit_to_json(fit))
        X = np.linspace(0, 1, 500)[:, None]
        np.testing.assert_array_equal(pair.eval_batch(X), fit.pair.eval_batch(X))
