from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from driftio.allocation import AllocationProblem, ObservationSeries
from driftio.config import load_preset
from driftio.estimators import (DECISION, KKT, Constant, EstimatorConfig, EstimatorState, InverseSqrt,
                                MirrorMap, baseline_fixed_online, batch_estimate, batch_fit,
                                make_loss, md_step, run_online, static_io)
from driftio.forward import ForwardError, solve_forward
from driftio.kkt import identifiability_certificate, kkt_loss, kkt_loss_subgradient
from driftio.scenarios import ScenarioSpec, generate_observations, generate_trajectory

from conftest import lp, qf

BOX = MirrorMap.box(0.0, 5.0, 2)
ONE_ROW = (np.array([[1.0, 1.0]]), np.array([10.0]))


def _state(theta, eta=0.05, mirror=BOX, loss=KKT):
    return EstimatorState.start(theta, Constant(eta), loss, mirror)


def _obs_with_grad(theta, g):
    # when the multiplier is 0 the KKT subgradient is -8 (x - theta) = g
    x = np.asarray(theta, dtype=float) - np.asarray(g, dtype=float) / 8.0
    return (*ONE_ROW, x)


class TestMirrorStep:
    def test_zero_gradient_fixed_point(self):
        for mirror in (BOX, MirrorMap.box(0.1, 5.0, 2, "NegativeEntropy")):
            theta = np.array([1.3, 2.2])
            np.testing.assert_array_equal(mirror.update(theta, np.zeros(2), 0.05), theta)
            st_ = md_step(_state(theta, mirror=mirror), (*ONE_ROW, theta.copy()), qf())
            np.testing.assert_array_equal(st_.theta_hat, theta)

    def test_hand_step(self):
        s = md_step(_state([1.0, 1.0]), _obs_with_grad([1.0, 1.0], [2.0, -2.0]), qf())
        np.testing.assert_allclose(s.theta_hat, [0.9, 1.1], atol=1e-15)

    def test_lower_clip(self):
        s = md_step(_state([0.05, 0.0]), _obs_with_grad([0.05, 0.0], [2.0, -2.0]), qf())
        np.testing.assert_allclose(s.theta_hat, [0.0, 0.1], atol=1e-15)

    def test_history_and_counter(self):
        s = _state([1.0, 1.0])
        for i in range(4):
            s = md_step(s, _obs_with_grad(s.theta_hat, [0.5, -0.5]), qf())
            assert len(s.history) == i + 1 and s.t == i + 2

    def test_negative_entropy_multiplicative(self):
        m = MirrorMap.box(0.1, 5.0, 2, "NegativeEntropy")
        out = m.update(np.array([1.0, 2.0]), np.array([1.0, -1.0]), 0.1)
        np.testing.assert_allclose(out, [np.exp(-0.1), 2 * np.exp(0.1)])

    def test_negative_entropy_needs_positive_domain(self):
        with pytest.raises(ValueError):
            MirrorMap.box(0.0, 2.0, 3, "NegativeEntropy")

    def test_decision_failure_carries_period(self):
        s = EstimatorState.start([1.0, 2.0], Constant(0.1), DECISION, BOX)
        s = replace(s, t=7)
        cost = lp(0.0, (0.0, 0.0), rho=0.1)
        with pytest.raises(ForwardError) as exc:
            md_step(s, (np.array([[1.0, 1.0]]), np.array([5.0]), np.array([1.0, 1.0])), cost, x_upper=[1, 1])
        assert exc.value.period == 7


@given(st.integers(0, 10_000), st.sampled_from(["Euclidean", "NegativeEntropy"]))
def test_bregman_nonnegative(seed, variant):
    rng = np.random.default_rng(seed)
    m = MirrorMap.box(0.1, 4.0, 3, variant)
    u, v = rng.uniform(0.1, 4, 3), rng.uniform(0.1, 4, 3)
    assert m.bregman(u, v) >= 0
    assert m.bregman(u, u) == pytest.approx(0.0, abs=1e-12)
    if not np.allclose(u, v):
        assert m.bregman(u, v) > 0


@given(st.integers(0, 10_000))
def test_euclidean_step_is_projected_ogd(seed):
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0, 5, 2)
    g = rng.normal(size=2) * 3
    s = md_step(_state(theta, eta=0.07), _obs_with_grad(theta, g), qf())
    gk = kkt_loss_subgradient(theta, *_obs_with_grad(theta, g), qf())
    direct = np.minimum(np.maximum(theta - 0.07 * gk, 0.0), 5.0)
    assert np.array_equal(s.theta_hat, direct)


def _stationary(preset="healthcare", T=150, sigma2=0.0, seed=42):
    p = load_preset(preset)
    spec = p.scenario(seed, sigma2=sigma2, stationary=True, T=T)
    traj = generate_trajectory(spec)
    return p, traj, generate_observations(spec, traj, p.B, p.q, p.cost, p.x_upper)


class TestRunOnline:
    def test_converges_on_stationary_decision_loss(self):
        p, traj, s = _stationary()
        run = run_online(s, p.estimator_config(DECISION), p.cost)
        err = np.linalg.norm(run.thetas - traj.thetas, axis=1)
        assert err[-1] < 0.1 * err[0]
        assert run.losses[-1] < 1e-3 * run.losses[0]

    def test_length_and_prediction_order(self):
        p, traj, s = _stationary(T=40)
        cfg = p.estimator_config(DECISION)
        run = run_online(s, cfg, p.cost)
        assert run.thetas.shape == (40, 5) and run.losses.shape == (40,)
        np.testing.assert_array_equal(run.thetas[0], cfg.theta0)
        model = make_loss(s, p.cost, DECISION)
        assert run.losses[5] == pytest.approx(model.value_grad(run.thetas[5], 5)[0], rel=1e-12)

    def test_deterministic(self):
        p, _, s = _stationary(T=60, sigma2=0.05)
        a = run_online(s, p.estimator_config(), p.cost)
        b = run_online(s, p.estimator_config(), p.cost)
        assert np.array_equal(a.thetas, b.thetas) and np.array_equal(a.losses, b.losses)

    def test_iterates_stay_in_domain(self):
        p, _, s = _stationary(preset="energy", T=80, sigma2=0.1)
        run = run_online(s, p.estimator_config(), p.cost)
        assert np.all(run.thetas >= p.theta_lo) and np.all(run.thetas <= p.theta_hi)

    def test_step_matches_md_step(self):
        p, _, s = _stationary(T=10, sigma2=0.02)
        cfg = p.estimator_config(KKT)
        run = run_online(s, cfg, p.cost)
        st_ = EstimatorState.start(cfg.theta0, cfg.schedule, KKT, cfg.mirror)
        for t in range(10):
            np.testing.assert_allclose(st_.theta_hat, run.thetas[t], atol=1e-13)
            st_ = md_step(st_, s.records[t], p.cost)


def _identifiable_series(rng, T=8, n=3):
    theta = rng.uniform(0.5, 2.5, n)
    recs = []
    cost = qf(rng.uniform(0, 0.5))
    for _ in range(T):
        B = rng.uniform(0.2, 1.0, (1, n))
        q = np.array([0.5 * float(B[0] @ theta)])
        recs.append((B, q, solve_forward(AllocationProblem(B, q, cost, theta)).x_star))
    return theta, cost, ObservationSeries(recs)


class TestBatch:
    def test_recovers_identifiable_truth(self, rng):
        for _ in range(3):
            theta, cost, s = _identifiable_series(rng)
            _, smin = identifiability_certificate(s, cost)
            assert smin > 1e-6
            est = batch_estimate(s, cost, KKT, MirrorMap.box(0.0, 5.0, 3))
            assert np.linalg.norm(est - theta) <= 1e-3

    def test_dominates_truth(self, rng):
        theta, cost, s = _identifiable_series(rng)
        model = make_loss(s, cost, KKT)
        fit = batch_fit(s, cost, KKT, MirrorMap.box(0.0, 5.0, 3), loss_model=model)
        assert fit.objective <= model.total(theta)[0] + 1e-6

    def test_single_period_degenerate(self):
        B, q = np.array([[1.0, 1.0]]), np.array([4.0])
        theta = np.array([3.0, 2.5])
        x = solve_forward(AllocationProblem(B, q, qf(), theta)).x_star
        s = ObservationSeries([(B, q, x)])
        ranks, _ = identifiability_certificate(s, qf())
        assert ranks == [1]
        fit = batch_fit(s, qf(), KKT, MirrorMap.box(0.0, 5.0, 2))
        assert fit.objective <= 1e-8
        # the whole ray theta + c (1, 1), c >= 0, fits exactly
        assert kkt_loss(theta + 0.7, B, q, x, qf()).total <= 1e-12
        assert np.linalg.norm(fit.theta - theta) > 1e-3

    def test_static_io_holds_prefix_fit(self):
        p, traj, s = _stationary(T=100, sigma2=0.01)
        cfg = p.estimator_config()
        run = static_io(s, p.cost, cfg, prefix_frac=0.1)
        np.testing.assert_array_equal(run.thetas[:10], np.broadcast_to(cfg.theta0, (10, 5)))
        assert np.all(run.thetas[10:] == run.thetas[10])
        assert np.linalg.norm(run.thetas[-1] - traj.thetas[-1]) < 0.5


class TestFixedOnline:
    def test_constant_steps(self):
        p, _, s = _stationary(T=50)
        run = baseline_fixed_online(s, p.cost, p.estimator_config(), eta0=0.3)
        assert np.all(run.etas == run.etas[0])
        assert run.etas[0] == pytest.approx(0.3 / np.sqrt(50))

    @pytest.mark.parametrize("name", ["healthcare", "energy"])
    def test_matches_inverse_sqrt_on_stationary(self, name):
        p, traj, s = _stationary(preset=name, T=200, sigma2=0.01)
        cfg = p.estimator_config()
        a = run_online(s, replace(cfg, schedule=InverseSqrt(p.fixed_eta0())), p.cost)
        b = baseline_fixed_online(s, p.cost, cfg, p.fixed_eta0())
        ea = np.linalg.norm(a.state.theta_hat - traj.thetas[-1])
        eb = np.linalg.norm(b.state.theta_hat - traj.thetas[-1])
        assert 0.5 <= ea / eb <= 2.0

    def test_lags_after_energy_shock(self):
        p = load_preset("energy")
        spec = p.scenario(42)
        traj = generate_trajectory(spec)
        s = generate_observations(spec, traj, p.B, p.q, p.cost, p.x_upper)
        cfg = p.estimator_config()
        model = make_loss(s, p.cost, cfg.loss_kind)
        da = run_online(s, cfg, p.cost, model)
        fo = baseline_fixed_online(s, p.cost, cfg, p.fixed_eta0(), loss_model=model)
        t0 = spec.theta_shocks[0][0] - 1
        worse = fo.losses[t0:t0 + 60] > da.losses[t0:t0 + 60]
        longest = run = 0
        for w in worse:
            run = run + 1 if w else 0
            longest = max(longest, run)
        assert longest >= 10


def test_custom_scenario_round_trip():
    spec = ScenarioSpec("Custom", n=3, k=1, T=30, theta_init=(1.0, 2.0, 0.5), drift_rates=(0, 0, 0),
                        theta_lo=(0, 0, 0), theta_hi=(3, 3, 3))
    traj = generate_trajectory(spec)
    B, q = np.array([[1.0, 2.0, 1.0]]), np.array([3.0])
    s = generate_observations(spec, traj, B, q, qf(0.2))
    cfg = EstimatorConfig(DECISION, Constant(0.1), MirrorMap.box(0, 3, 3), np.zeros(3))
    run = run_online(s, cfg, qf(0.2))
    assert run.losses[-1] < run.losses[0]
