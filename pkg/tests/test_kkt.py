import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from driftio.allocation import AllocationProblem, ObservationSeries, ShapeError, cost_gradient
from driftio.forward import ForwardError, solve_forward
from driftio.kkt import (build_projector, decision_loss, decision_loss_subgradient, dual_gap,
                         identifiability_certificate, kkt_loss, kkt_loss_subgradient)

from conftest import lp, qf


def projector_errors(B):
    P = build_projector(B).P
    Bm = np.atleast_2d(B)
    return (np.max(np.abs(P - P.T)), np.max(np.abs(P @ P - P)), np.max(np.abs(P @ Bm.T)))


class TestProjector:
    def test_single_row(self):
        np.testing.assert_allclose(build_projector([[1, 1]]).P, [[0.5, -0.5], [-0.5, 0.5]], atol=1e-15)

    def test_identity_gives_zero(self):
        pr = build_projector(np.eye(4))
        np.testing.assert_allclose(pr.P, 0, atol=1e-15)
        assert pr.b_rank == 4

    def test_zero_gives_identity(self):
        pr = build_projector(np.zeros((2, 3)))
        np.testing.assert_array_equal(pr.P, np.eye(3))
        assert pr.b_rank == 0

    def test_rank_deficient(self):
        B = np.array([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]])
        pr = build_projector(B)
        assert pr.b_rank == 1
        assert max(projector_errors(B)) <= 1e-10

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            build_projector([[np.nan, 1.0]])

    def test_random_algebra(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 9))
            k = int(rng.integers(1, n + 1))
            B = rng.normal(size=(k, n)) * rng.uniform(0.1, 10)
            assert max(projector_errors(B)) <= 1e-10


def grid_dual_gap(g, B):
    """Grid search over lam >= 0 (k <= 2), coarse then 1e-3 around the coarse best.

    The box edge 2 |g| / sigma_min(B) bounds every minimizer.
    """
    g, B = np.asarray(g, dtype=float), np.atleast_2d(B)
    k = B.shape[0]
    hi = 2 * np.linalg.norm(g) / np.linalg.svd(B, compute_uv=False)[-1] + 1e-3
    step = max(1e-3, hi / (2000 if k == 1 else 400))

    def best(grid):
        R = g[None, :] + grid @ B
        v = np.sum(R * R, axis=1)
        i = int(np.argmin(v))
        return v[i], grid[i]

    def mesh(axes):
        return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, k)

    _, lc = best(mesh([np.arange(0, hi + step, step)] * k))
    return best(mesh([np.arange(max(0, c - 2 * step), c + 2 * step + 5e-4, 1e-3) for c in lc]))[0]


class TestDualGap:
    def test_exact_cancel(self):
        v, lam = dual_gap([-2, -2], [[1, 1]])
        assert v == pytest.approx(0.0, abs=1e-20)
        np.testing.assert_allclose(lam, [2.0])

    def test_nonnegativity_binds(self):
        v, lam = dual_gap([1, 1], [[1, 1]])
        assert v == pytest.approx(2.0)
        np.testing.assert_array_equal(lam, [0.0])

    def test_grid_oracle(self, rng):
        for _ in range(100):
            k = int(rng.integers(1, 3))
            n = int(rng.integers(k, 5))
            B = rng.uniform(0, 2, (k, n))
            g = rng.normal(size=n) * 2
            v, lam = dual_gap(g, B)
            assert np.all(lam >= 0)
            assert v == pytest.approx(grid_dual_gap(g, B), abs=1e-4)

    def test_free_rows(self, rng):
        B = rng.uniform(0, 1, (2, 4))
        g = rng.normal(size=4)
        v, lam = dual_gap(g, B, free_rows=[True, True])
        r = np.linalg.lstsq(B.T, -g, rcond=None)[0]
        np.testing.assert_allclose(lam, r, atol=1e-10)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            dual_gap([1, 2, 3], [[1, 1]])


def _binding_instance():
    B, q = np.array([[1.0, 1.0]]), np.array([4.0])
    theta = np.array([3.0, 3.0])
    x = solve_forward(AllocationProblem(B, q, qf(), theta)).x_star
    return B, q, x, theta


class TestKktLoss:
    def test_round_trip_binding(self):
        B, q, x, theta = _binding_instance()
        assert kkt_loss(theta, B, q, x, qf()).total <= 1e-8

    def test_round_trip_healthcare_style(self):
        B = np.array([[10, 5, 0, 4, 0], [10, 20, 25, 20, 30]], dtype=float)
        q = np.array([50.0, 120.0])
        theta = np.array([2.5, 2.0, 1.0, 1.5, 1.0])
        cost = qf(0.1)
        sol = solve_forward(AllocationProblem(B, q, cost, theta))
        assert sol.lambda_star[1] > 0
        assert kkt_loss(theta, B, q, sol.x_star, cost).total <= 1e-8

    def test_interior_stationary_all_zero(self):
        br = kkt_loss([1, 2], [[1, 1]], [10], [1, 2], qf())
        assert (br.primal_gap, br.dual_gap, br.comp_gap, br.total) == (0.0, 0.0, 0.0, 0.0)

    def test_infeasible_primal_gap(self, rng):
        for _ in range(5):
            br = kkt_loss(rng.normal(size=2), [[1, 1]], [1], [1, 1], qf())
            assert br.primal_gap == pytest.approx(1.0)

    def test_breakdown_invariants(self, rng):
        for _ in range(50):
            n, k = 4, int(rng.integers(1, 3))
            B = rng.uniform(0, 1, (k, n))
            q = rng.uniform(0.5, 2, k)
            x = rng.uniform(-0.2, 1.5, n)
            theta = rng.normal(size=n)
            cost = qf(rng.uniform(0, 1))
            br = kkt_loss(theta, B, q, x, cost)
            assert min(br.primal_gap, br.dual_gap, br.comp_gap) >= 0
            assert br.total == pytest.approx(br.primal_gap + br.dual_gap + br.comp_gap, rel=1e-12)
            assert np.all(br.lambda_argmin >= 0)
            g = cost_gradient(AllocationProblem(B, q, cost, theta), x)
            r = g + B.T @ br.lambda_argmin
            assert r @ r == pytest.approx(br.dual_gap, abs=1e-10)
            assert br.comp_gap == pytest.approx(abs(br.lambda_argmin @ (B @ x - q)), abs=1e-12)


def _fd(f, theta, h):
    return np.array([(f(theta + h * e) - f(theta - h * e)) / (2 * h) for e in np.eye(theta.size)])


class TestKktSubgradient:
    def test_zero_at_minimum(self):
        B, q, x, theta = _binding_instance()
        np.testing.assert_allclose(kkt_loss_subgradient(theta, B, q, x, qf()), 0, atol=1e-10)

    def test_interior_symbolic(self, rng):
        x = np.array([0.5, 0.7])
        for _ in range(5):
            # theta below x keeps the gradient in the dual cone, so the multiplier is 0
            theta = x - rng.uniform(0, 0.4, 2)
            assert kkt_loss(theta, [[1, 1]], [10], x, qf()).lambda_argmin[0] == 0.0
            g = kkt_loss_subgradient(theta, [[1, 1]], [10], x, qf())
            np.testing.assert_allclose(g, -8 * (x - theta), atol=1e-12)

    @pytest.mark.parametrize("family", ["qf", "lp"])
    def test_finite_differences(self, rng, family):
        checked = 0
        while checked < 20:
            n, k = 4, int(rng.integers(1, 3))
            B = rng.uniform(0.1, 1, (k, n))
            q = rng.uniform(0.5, 2, k)
            x = rng.uniform(-0.2, 1.5, n)
            theta = rng.normal(size=n)
            cost = qf(rng.uniform(0, 1)) if family == "qf" else lp(0.3, rng.uniform(0, 1, n))
            f = lambda th: kkt_loss(th, B, q, x, cost).total
            # skip points near a change of the NNLS support
            lam = kkt_loss(theta, B, q, x, cost).lambda_argmin
            if np.any((lam > 0) & (lam < 1e-3)):
                continue
            g = kkt_loss_subgradient(theta, B, q, x, cost)
            fd = _fd(f, theta, 1e-6)
            assert np.max(np.abs(g - fd)) <= 1e-4 * max(1.0, np.max(np.abs(fd)))
            checked += 1


class TestDecisionLoss:
    def test_zero_at_truth(self):
        B, q, x, theta = _binding_instance()
        assert decision_loss(theta, B, q, x, qf()) == pytest.approx(0.0, abs=1e-16)

    def test_box_interior(self, rng):
        B, q = np.eye(3), np.full(3, 5.0)
        for _ in range(5):
            th, thp = rng.uniform(0.5, 4, 3), rng.uniform(0.5, 4, 3)
            x_obs = solve_forward(AllocationProblem(B, q, qf(), thp)).x_star
            assert decision_loss(th, B, q, x_obs, qf()) == pytest.approx(np.sum((th - thp) ** 2), abs=1e-12)

    @pytest.mark.parametrize("family", ["qf0", "qf", "lp"])
    def test_analytic_matches_fd(self, rng, family):
        for _ in range(8):
            n, k = 4, 2
            B = rng.uniform(0.2, 1, (k, n))
            q = rng.uniform(0.5, 1.5, k)
            if family == "lp":
                B, q = B[:1], q[:1]
                cost = lp(0.3, rng.uniform(0, 1, n), rho=0.3)
                theta = rng.uniform(0, 2, n)
            else:
                cost = qf(0.0 if family == "qf0" else rng.uniform(0.05, 1))
                theta = rng.uniform(-0.5, 2.5, n)
            x_obs = rng.uniform(0, 1, n)
            ga = decision_loss_subgradient(theta, B, q, x_obs, cost, method="analytic")
            gf = decision_loss_subgradient(theta, B, q, x_obs, cost, method="fd")
            assert np.max(np.abs(ga - gf)) <= 1e-3 * max(1.0, np.max(np.abs(gf)))

    def test_forward_failure_propagates(self):
        cost = lp(0.0, (0.0, 0.0), rho=0.1)
        with pytest.raises(ForwardError):
            decision_loss([1, 2], [[1, 1]], [5], [1, 1], cost, x_upper=[1, 1])


class TestIdentifiability:
    def test_identity_nothing_identifiable(self):
        s = ObservationSeries([(np.eye(3), np.ones(3), np.full(3, 0.5))] * 4)
        ranks, smin = identifiability_certificate(s, qf())
        assert ranks == [0, 0, 0, 0] and smin == 0.0

    def test_single_row_rank_one(self):
        rec = (np.array([[1.0, 1.0]]), np.array([4.0]), np.array([2.0, 2.0]))
        for T in (1, 5):
            ranks, smin = identifiability_certificate(ObservationSeries([rec] * T), qf())
            assert ranks == [1] * T and smin == 0.0

    def test_complementary_rows_full_rank(self):
        s = ObservationSeries([(np.array([[1.0, 0.0]]), np.array([1.0]), np.array([0.3, 0.4])),
                               (np.array([[0.0, 1.0]]), np.array([1.0]), np.array([0.3, 0.4]))])
        ranks, smin = identifiability_certificate(s, qf())
        assert ranks == [1, 1]
        assert smin == pytest.approx(2.0, abs=1e-12)

    def test_null_direction_attains_zero_loss(self):
        B, q, x, theta = _binding_instance()
        for c in (0.1, 0.5, 1.0):
            assert kkt_loss(theta + c * np.ones(2), B, q, x, qf()).total <= 1e-12


@given(st.integers(0, 10_000), st.integers(1, 8))
def test_projector_invariants_property(seed, n):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, n + 1))
    B = rng.normal(size=(k, n))
    if rng.random() < 0.3:
        B[-1] = B[0] * rng.normal()
    assert max(projector_errors(B)) <= 1e-10
