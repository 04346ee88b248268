import numpy as np
import pytest

from optnets.errors import DimensionMismatch, NoRegion, ScaleExceeded
from optnets.lp_core import SolveResult, Status, check_kkt, solve_lp, solve_qp
from optnets.multiparametric import (
    CriticalRegion,
    ParamQPSpec,
    count_regions,
    covering_bound_pwa,
    covering_bound_smooth,
    enumerate_regions,
    explicit_eval,
    explicit_law,
    kappa,
    regions_to_csv,
    regions_to_json,
    spec_from_json,
    spec_to_json,
)


def ramp_lp_spec():
    """min -z s.t. z <= x, z <= 2 - x; two regions meeting at x = 1."""
    return ParamQPSpec(
        n_z=1, n_x=1, n_theta=0, kind="lp",
        b0=[-1.0],
        A1=[[1.0], [1.0]], b1=[0.0, 2.0],
        U1x=[[1.0], [-1.0]],
    )


def random_lp_spec(rng, n_z=2, n_x=2, n_t=1, m1=4, m2=0):
    return ParamQPSpec(
        n_z=n_z, n_x=n_x, n_theta=n_t, kind="lp",
        U0x=rng.uniform(-1, 1, (n_z, n_x)),
        U0t=rng.uniform(-1, 1, (n_z, n_t)),
        b0=rng.uniform(-1, 1, n_z),
        A1=rng.uniform(-1, 1, (m1, n_z)),
        b1=rng.uniform(0.5, 1.5, m1),
        U1x=rng.uniform(-0.5, 0.5, (m1, n_x)),
        U1t=rng.uniform(-0.5, 0.5, (m1, n_t)),
        A2=rng.uniform(-1, 1, (m2, n_z)) if m2 else None,
        b2=rng.uniform(-0.2, 0.2, m2) if m2 else None,
        U2x=rng.uniform(-0.5, 0.5, (m2, n_x)) if m2 else None,
        U2t=rng.uniform(-0.5, 0.5, (m2, n_t)) if m2 else None,
    )


def random_qp_spec(rng, n_z=2, n_x=2, n_t=1, m1=4, m2=0):
    F = rng.uniform(-1, 1, (n_z, n_z))
    base = random_lp_spec(rng, n_z, n_x, n_t, m1, m2)
    data = {name: getattr(base, name) for name in
            ("U0x", "U0t", "b0", "A1", "b1", "U1x", "U1t", "A2", "b2", "U2x", "U2t")}
    return ParamQPSpec(n_z=n_z, n_x=n_x, n_theta=n_t, kind="qp",
                       A0=F @ F.T + np.eye(n_z), **data)


class TestExplicitLaw:
    def test_lp_identity_algebra(self):
        spec = ParamQPSpec(n_z=2, n_x=2, n_theta=0, kind="lp",
                           A1=np.eye(2), b1=[0.0, 0.0], U1x=np.eye(2))
        law = explicit_law(spec, (0, 1))
        np.testing.assert_allclose(law.A_tilde, np.eye(2), atol=1e-12)
        assert not law.rank_deficient

    def test_qp_matches_direct_kkt_solve(self):
        spec = ParamQPSpec(n_z=1, n_x=1, n_theta=0, kind="qp",
                           A0=[[1.0]], A1=[[1.0]], b1=[0.0], U1x=[[1.0]])
        law = explicit_law(spec, (0,))
        # KKT of min 0.5 z^2 s.t. z <= x gives z = x on the active branch
        for x in (0.2, -0.7, 1.5):
            KKT = np.array([[1.0, 1.0], [1.0, 0.0]])
            sol = np.linalg.solve(KKT, np.array([0.0, x]))
            assert law.solution([x], []) == pytest.approx(sol[0], abs=1e-12)

    def test_qp_empty_active_set_is_unconstrained_law(self):
        rng = np.random.default_rng(8)
        spec = random_qp_spec(rng)
        law = explicit_law(spec, ())
        np.testing.assert_allclose(law.A_tilde,
                                   -np.linalg.inv(spec.A0) @ spec.U0x, atol=1e-12)

    def test_rank_deficient_flagged(self):
        spec = ParamQPSpec(n_z=2, n_x=1, n_theta=0, kind="lp",
                           A1=[[1.0, 0.0], [1.0, 0.0]], b1=[0.0, 0.0],
                           U1x=[[1.0], [1.0]])
        law = explicit_law(spec, (0, 1))
        assert law.rank_deficient

    def test_oversized_active_set_rejected(self):
        spec = ramp_lp_spec()
        with pytest.raises(DimensionMismatch):
            explicit_law(spec, (0, 1))


class TestEnumerateRegions:
    def test_ramp_regions(self):
        regions = enumerate_regions(ramp_lp_spec(), theta=[], x_box=(0.0, 2.0))
        assert len(regions) == 2
        laws = sorted((r.slope[0, 0], r.intercept[0]) for r in regions)
        assert laws[0] == (pytest.approx(-1.0), pytest.approx(2.0))
        assert laws[1] == (pytest.approx(1.0), pytest.approx(0.0))

    def test_unconstrained_dominant_qp_single_region(self):
        spec = ParamQPSpec(n_z=1, n_x=1, n_theta=0, kind="qp",
                           A0=[[1.0]], A1=[[1.0]], b1=[100.0], U1x=[[0.0]])
        regions = enumerate_regions(spec, theta=[], x_box=(-1.0, 1.0))
        assert len(regions) == 1
        assert regions[0].iota == ()

    def test_explicit_matches_numeric_lp(self):
        rng = np.random.default_rng(11)
        compared = 0
        for trial in range(10):
            spec = random_lp_spec(rng)
            theta = rng.uniform(-0.5, 0.5, spec.n_theta)
            regions = enumerate_regions(spec, theta, x_box=(-1.0, 1.0))
            for _ in range(20):
                x = rng.uniform(-1, 1, spec.n_x)
                res = solve_lp(spec.instantiate(x, theta))
                try:
                    z = explicit_eval(regions, x)
                except NoRegion:
                    continue
                if res.status is not Status.OPTIMAL:
                    continue
                np.testing.assert_allclose(z, res.primal, atol=1e-6,
                                           err_msg=f"trial {trial}")
                compared += 1
        assert compared >= 60

    def test_explicit_matches_numeric_qp(self):
        rng = np.random.default_rng(12)
        compared = 0
        for trial in range(10):
            spec = random_qp_spec(rng)
            theta = rng.uniform(-0.5, 0.5, spec.n_theta)
            regions = enumerate_regions(spec, theta, x_box=(-1.0, 1.0))
            for _ in range(20):
                x = rng.uniform(-1, 1, spec.n_x)
                res = solve_qp(spec.instantiate(x, theta))
                try:
                    z = explicit_eval(regions, x)
                except NoRegion:
                    continue
                if res.status is not Status.OPTIMAL:
                    continue
                np.testing.assert_allclose(z, res.primal, atol=1e-6,
                                           err_msg=f"trial {trial}")
                compared += 1
        assert compared >= 100

    def test_region_count_never_exceeds_bound(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            spec = random_lp_spec(rng, m1=int(rng.integers(2, 6)))
            theta = rng.uniform(-0.5, 0.5, spec.n_theta)
            regions = enumerate_regions(spec, theta)
            assert len(regions) <= count_regions(spec.m1, spec.n_z, spec.m2)

    def test_law_satisfies_kkt_at_interior_samples(self):
        rng = np.random.default_rng(14)
        spec = random_qp_spec(rng)
        theta = rng.uniform(-0.5, 0.5, spec.n_theta)
        regions = enumerate_regions(spec, theta, x_box=(-1.0, 1.0))
        checked = 0
        for region in regions:
            for _ in range(50):
                d = rng.normal(size=spec.n_x)
                x = region.center + rng.uniform(0, region.radius * 0.9) \
                    * d / np.linalg.norm(d)
                if not region.contains(x):
                    continue
                prob = spec.instantiate(x, theta)
                z = region.solution(x)
                lam = np.zeros(spec.m1)
                if region.iota:
                    lam[list(region.iota)] = region.law.ineq_duals(x, theta)
                duals = np.concatenate([lam, np.zeros(spec.m2)])
                res = SolveResult(status=Status.OPTIMAL, primal=z, duals=duals,
                                  active_set=region.iota, objective=0.0)
                rep = check_kkt(prob, res, tol=1e-6)
                assert rep.worst() <= 1e-6
                checked += 1
        assert checked >= 50

    def test_qp_facet_continuity(self):
        rng = np.random.default_rng(15)
        spec = random_qp_spec(rng, n_z=2, n_x=1, m1=3)
        theta = rng.uniform(-0.5, 0.5, spec.n_theta)
        regions = enumerate_regions(spec, theta, x_box=(-1.0, 1.0))
        agree = 0
        for x in rng.uniform(-1, 1, size=(500, 1)):
            holders = [r for r in regions if r.contains(x, tol=1e-5)]
            for a in holders:
                for b in holders:
                    np.testing.assert_allclose(a.solution(x), b.solution(x),
                                               atol=1e-6)
                    agree += 1
        assert agree > 0

    def test_scale_guard(self):
        spec = ParamQPSpec(n_z=1, n_x=1, n_theta=0, kind="lp",
                           A1=np.ones((13, 1)), b1=np.ones(13),
                           U1x=np.zeros((13, 1)))
        with pytest.raises(ScaleExceeded):
            enumerate_regions(spec, theta=[])


class TestExplicitEval:
    def test_ramp_values(self):
        regions = enumerate_regions(ramp_lp_spec(), theta=[], x_box=(0.0, 2.0))
        assert explicit_eval(regions, [0.3])[0] == pytest.approx(0.3, abs=1e-9)
        assert explicit_eval(regions, [1.0])[0] == pytest.approx(1.0, abs=1e-9)
        assert explicit_eval(regions, [1.7])[0] == pytest.approx(0.3, abs=1e-9)

    def test_ramp_matches_solver_densely(self):
        spec = ramp_lp_spec()
        regions = enumerate_regions(spec, theta=[], x_box=(0.0, 2.0))
        rng = np.random.default_rng(16)
        for x in rng.uniform(0, 2, size=1000):
            res = solve_lp(spec.instantiate([x], []))
            z = explicit_eval(regions, [x])
            assert abs(z[0] - res.primal[0]) <= 1e-6

    def test_no_region_raises(self):
        regions = enumerate_regions(ramp_lp_spec(), theta=[], x_box=(0.0, 2.0))
        with pytest.raises(NoRegion):
            explicit_eval(regions, [50.0])


class TestKappa:
    def test_identity_sensitivity(self):
        spec = ParamQPSpec(n_z=2, n_x=2, n_theta=0, kind="lp",
                           A1=np.eye(2), b1=[1.0, 1.0], U1x=np.eye(2))
        assert kappa(spec) == pytest.approx(1.0, abs=1e-12)

    def test_zero_sensitivity(self):
        spec = ParamQPSpec(n_z=2, n_x=2, n_theta=0, kind="lp",
                           A1=np.eye(2), b1=[1.0, 1.0], U1x=np.zeros((2, 2)))
        assert kappa(spec) == 0.0

    def test_scaling_homogeneity(self):
        rng = np.random.default_rng(17)
        spec = random_lp_spec(rng)
        scaled = ParamQPSpec(
            n_z=spec.n_z, n_x=spec.n_x, n_theta=spec.n_theta, kind="lp",
            U0x=spec.U0x, U0t=spec.U0t, b0=spec.b0,
            A1=spec.A1, b1=spec.b1, U1x=3.0 * spec.U1x, U1t=spec.U1t)
        assert kappa(scaled) == pytest.approx(3.0 * kappa(spec), rel=1e-10)

    def test_matches_independent_enumeration(self):
        from itertools import combinations

        rng = np.random.default_rng(18)
        spec = random_lp_spec(rng, n_z=2, m1=4)
        worst = 0.0
        for size in range(0, spec.n_z + 1):
            for iota in combinations(range(spec.m1), size):
                G = spec.A1[list(iota)]
                U = spec.U1x[list(iota)]
                A = np.linalg.pinv(G) @ U if G.size else np.zeros((spec.n_z, spec.n_x))
                if A.size:
                    worst = max(worst, np.linalg.norm(A, 2))
        assert kappa(spec) == pytest.approx(worst, abs=0.0)


class TestCountsAndBounds:
    def test_count_examples(self):
        assert count_regions(3, 2, 0) == 7
        assert count_regions(2, 5, 0) == 4
        assert count_regions(0, 3, 0) == 1

    def test_count_matches_subset_enumeration(self):
        from itertools import combinations

        rng = np.random.default_rng(19)
        for _ in range(20):
            m1 = int(rng.integers(0, 7))
            n_z = int(rng.integers(0, 5))
            m2 = int(rng.integers(0, min(n_z, 2) + 1))
            direct = sum(1 for size in range(0, max(n_z - m2, -1) + 1)
                         for _ in combinations(range(m1), size) if size <= m1)
            assert count_regions(m1, n_z, m2) == direct

    def test_pwa_bound_examples(self):
        assert covering_bound_pwa(0.1, 1.0, 3, 2, 0) == pytest.approx(700.0)
        assert covering_bound_pwa(0.1, 0.0, 3, 2, 0) == 0.0

    def test_pwa_bound_quadruples_when_eps_halves(self):
        full = covering_bound_pwa(0.05, 2.0, 4, 2, 0)
        assert full == pytest.approx(4 * covering_bound_pwa(0.1, 2.0, 4, 2, 0))

    def test_pwa_bound_monotonicity(self):
        rng = np.random.default_rng(20)
        for _ in range(30):
            eps = rng.uniform(0.01, 1.0)
            kap = rng.uniform(0.1, 3.0)
            m1 = int(rng.integers(1, 8))
            assert covering_bound_pwa(eps, kap, m1, 2, 0) <= \
                covering_bound_pwa(eps * 0.5, kap, m1, 2, 0)
            assert covering_bound_pwa(eps, kap, m1, 2, 0) <= \
                covering_bound_pwa(eps, kap, m1 + 1, 2, 0)
            assert covering_bound_pwa(eps, kap, m1, 2, 0) <= \
                covering_bound_pwa(eps, kap + 0.1, m1, 2, 0)

    def test_smooth_bound_example(self):
        got = covering_bound_smooth(0.01, 2, 2, 100)
        assert got == pytest.approx(1000 + 4 * np.log(100.0), abs=1e-9)

    def test_smooth_bound_degenerate_cases(self):
        assert covering_bound_smooth(0.01, 2, 2, 0) == pytest.approx(4 * np.log(100.0))
        assert covering_bound_smooth(1.0, 3, 2, 42) == pytest.approx(42.0)


class TestExports:
    def test_json_and_csv(self):
        import csv as csvmod
        import io
        import json

        regions = enumerate_regions(ramp_lp_spec(), theta=[], x_box=(0.0, 2.0))
        doc = json.loads(regions_to_json(regions))
        assert len(doc) == 2
        assert all("slope" in r and "iota" in r for r in doc)
        text = regions_to_csv(regions)
        rows = list(csvmod.reader(io.StringIO(text)))
        assert rows[0] == ["iota", "active_count", "spectral_norm", "retained"]
        assert len(rows) == 3

    def test_spec_document_round_trip(self):
        rng = np.random.default_rng(21)
        spec = random_qp_spec(rng)
        back = spec_from_json(spec_to_json(spec))
        np.testing.assert_array_equal(back.A0, spec.A0)
        np.testing.assert_array_equal(back.U1x, spec.U1x)
        assert back.kind == "qp"
