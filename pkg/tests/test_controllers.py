import numpy as np
import pytest

from picontrol.controllers import (CemConfig, MppiConfig, Pi2CmaConfig,
                                   PolicyParams, cem_trajopt, closed_loop_cost,
                                   cross_entropy_minimize, linear_policy_update,
                                   mppi_control_loop, mppi_plan_step,
                                   nonlinear_policy_update, pi2_cma_iterate,
                                   policy_rollout_batch)
from picontrol.core import ControlSequence, CostModel, DynamicsModel, derive_seed
from picontrol.errors import ConfigurationError, PlanningFailedError
from picontrol.models import lq_analytic_oracle, lq_cost, lq_model


def lq_setup():
    return lq_model(diffusion_scale=1.0), lq_cost(1.0, 1.0)


def integer_cost_model(offset=0.0):
    """Stage costs land on exactly representable values: q = x rounded, phi = offset."""
    return CostModel(
        running_state_cost=lambda t, x: np.broadcast_to(
            np.abs(np.rint(x[..., 0])),
            np.broadcast_shapes(np.shape(t), x.shape[:-1])).copy(),
        terminal_cost=lambda x: np.full(x.shape[:-1], float(offset)),
        control_weight=np.zeros((1, 1)),
    )


class TestMppiPlanStep:
    def test_single_sample_applies_its_perturbation(self):
        model, cost = lq_setup()
        cfg = MppiConfig(num_samples=1, horizon=5, dt=0.1, noise_scale=0.7)
        nominal = ControlSequence.zeros(5, 1, 0.1)
        updated, diag = mppi_plan_step(model, cost, nominal, np.array([1.0]),
                                       0.0, cfg, rng_seed=3)
        from picontrol.core import sample_noise
        noise = sample_noise(1, 5, 1, scale=0.7, dt=0.1, seed=3)
        np.testing.assert_allclose(updated.controls, noise.samples[0],
                                   rtol=0, atol=0)
        assert diag.ess == 1.0

    def test_zero_noise_scale_returns_nominal(self):
        model, cost = lq_setup()
        cfg = MppiConfig(num_samples=16, horizon=4, dt=0.1, noise_scale=0.0)
        nominal = ControlSequence(dt=0.1,
                                  controls=np.linspace(-1, 1, 4)[:, None])
        updated, _ = mppi_plan_step(model, cost, nominal, np.array([0.5]),
                                    0.0, cfg, rng_seed=0)
        np.testing.assert_array_equal(updated.controls, nominal.controls)

    def test_constant_cost_shift_is_bit_identical(self):
        # Adding a constant to every rollout cost (via the terminal cost) must
        # not change the update at all.
        model, _ = lq_setup()
        cfg = MppiConfig(num_samples=32, horizon=4, dt=1.0, noise_scale=1.0,
                         temperature=2.0)
        nominal = ControlSequence.zeros(4, 1, 1.0)
        base, _ = mppi_plan_step(model, integer_cost_model(0.0), nominal,
                                 np.array([1.0]), 0.0, cfg, rng_seed=9)
        shifted, _ = mppi_plan_step(model, integer_cost_model(64.0), nominal,
                                    np.array([1.0]), 0.0, cfg, rng_seed=9)
        np.testing.assert_array_equal(base.controls, shifted.controls)

    def test_low_temperature_picks_best_rollout(self):
        model, cost = lq_setup()
        nominal = ControlSequence.zeros(6, 1, 0.05)
        x0 = np.array([1.0])
        cfg_ref = MppiConfig(num_samples=64, horizon=6, dt=0.05, noise_scale=1.0,
                             temperature=1.0)
        from picontrol.core import sample_noise, rollout_batch
        from picontrol.controllers import _path_integral_costs
        noise = sample_noise(64, 6, 1, scale=1.0, dt=0.05, seed=5)
        batch = rollout_batch(model, cost, nominal, noise, x0, 0.0)
        delta = noise.samples
        weight_costs = _path_integral_costs(batch, nominal, delta, cost, cfg_ref,
                                            None)
        spread = weight_costs.max() - weight_costs.min()
        cfg = MppiConfig(num_samples=64, horizon=6, dt=0.05, noise_scale=1.0,
                         temperature=1e-9 * spread)
        updated, _ = mppi_plan_step(model, cost, nominal, x0, 0.0, cfg,
                                    rng_seed=5)
        best = np.argmin(weight_costs, axis=0)
        expected = nominal.controls + noise.samples[best, np.arange(6)]
        assert np.max(np.abs(updated.controls - expected)) < 1e-6

    def test_lq_first_step_matches_riccati(self):
        # K=1e4, N=40, dt=0.05, x0=1: first-step control within 10% of the
        # backward-Riccati oracle.
        N, dt = 40, 0.05
        model, cost = lq_setup()
        oracle = lq_analytic_oracle(N, dt, 1.0, 1.0)
        cfg = MppiConfig(num_samples=10_000, horizon=N, dt=dt, temperature=1.0,
                         noise_scale=1.0)
        nominal = ControlSequence.zeros(N, 1, dt)
        updated, _ = mppi_plan_step(model, cost, nominal, np.array([1.0]), 0.0,
                                    cfg, rng_seed=0)
        u_star = -oracle.gains[0]
        assert abs(updated.controls[0, 0] - u_star) / abs(u_star) < 0.10

    def test_per_trajectory_mode_uses_first_step_weights(self):
        model, cost = lq_setup()
        cfg = MppiConfig(num_samples=32, horizon=5, dt=0.1, noise_scale=1.0,
                         weight_mode="per_trajectory")
        nominal = ControlSequence.zeros(5, 1, 0.1)
        updated, diag = mppi_plan_step(model, cost, nominal, np.array([1.0]),
                                       0.0, cfg, rng_seed=1)
        assert updated.controls.shape == (5, 1)
        assert 1.0 <= diag.ess <= 32.0

    def test_all_diverged_raises_planning_failed(self):
        model = DynamicsModel(
            state_dim=1, control_dim=1,
            drift=lambda t, x: np.full_like(x, np.nan),
            input_matrix=lambda t, x: np.ones(x.shape[:-1] + (1, 1)),
            diffusion_scale=[1.0])
        cost = lq_cost(1.0, 1.0)
        cfg = MppiConfig(num_samples=4, horizon=3, dt=0.1)
        nominal = ControlSequence.zeros(3, 1, 0.1)
        with pytest.raises(PlanningFailedError) as err:
            mppi_plan_step(model, cost, nominal, np.array([1.0]), 0.0, cfg, 0)
        assert err.value.diagnostics is not None


class TestMppiControlLoop:
    def test_equilibrium_fixed_point(self):
        # Zero noise, zero init controls, zero-drift start at the origin:
        # the state stays there for every step.
        model, cost = lq_setup()
        cfg = MppiConfig(num_samples=8, horizon=4, dt=0.1, noise_scale=0.0)
        log = mppi_control_loop(model, cost, np.array([0.0]), cfg, 5, 0)
        np.testing.assert_array_equal(log.states, np.zeros((5, 1)))
        np.testing.assert_array_equal(log.controls, np.zeros((5, 1)))

    def test_log_timestamps_monotone(self):
        model, cost = lq_setup()
        cfg = MppiConfig(num_samples=8, horizon=4, dt=0.1)
        log = mppi_control_loop(model, cost, np.array([1.0]), cfg, 7, 1)
        assert len(log) == 7
        np.testing.assert_allclose(log.times, 0.1 * np.arange(7), atol=1e-12)
        assert np.all(np.diff(log.times) > 0)

    def test_seeded_determinism(self):
        model, cost = lq_setup()
        cfg = MppiConfig(num_samples=16, horizon=5, dt=0.1)
        a = mppi_control_loop(model, cost, np.array([1.0]), cfg, 6, 42,
                              plant_noise=True)
        b = mppi_control_loop(model, cost, np.array([1.0]), cfg, 6, 42,
                              plant_noise=True)
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.controls, b.controls)

    def test_cost_to_go_column_tracks_free_energy(self):
        model, cost = lq_setup()
        cfg = MppiConfig(num_samples=16, horizon=5, dt=0.1)
        log = mppi_control_loop(model, cost, np.array([1.0]), cfg, 4, 3)
        for rec in log.records:
            assert rec.cost_to_go == rec.diagnostics.free_energy


class TestCem:
    def test_elite_threshold_order_statistics(self):
        # costs [3,1,4,2] with K_e=2: threshold 2, elites at indices 1 and 3.
        costs_fixed = np.array([3.0, 1.0, 4.0, 2.0])
        seen = {}

        def objective(candidates):
            seen["candidates"] = candidates.copy()
            return costs_fixed

        cfg = CemConfig(num_samples=4, elite_count=2, max_iters=1,
                        initial_std=1.0)
        mean, _, history = cross_entropy_minimize(
            objective, np.zeros(2), np.eye(2), cfg, rng_seed=0)
        assert history[0].threshold == 2.0
        elite = seen["candidates"][costs_fixed <= 2.0]
        np.testing.assert_allclose(mean, elite.mean(axis=0))

    @pytest.mark.parametrize("covariance", ["full", "diagonal"])
    def test_quadratic_converges_ten_seeds(self, covariance):
        target = np.array([1.5, -0.7])

        def objective(candidates):
            d = candidates - target
            return np.einsum("kp,kp->k", d, d)

        cfg = CemConfig(num_samples=64, elite_count=8, max_iters=50,
                        tolerance=0.0, initial_std=0.5, covariance=covariance)
        for seed in range(10):
            mean, _, _ = cross_entropy_minimize(objective, np.zeros(2),
                                                0.25 * np.eye(2), cfg, seed)
            assert np.linalg.norm(mean - target) < 1e-2, f"seed {seed}"

    def test_near_full_elite_matches_direct_average(self):
        rng_costs = {}

        def objective(candidates):
            costs = np.einsum("kp,kp->k", candidates, candidates)
            rng_costs["candidates"] = candidates.copy()
            rng_costs["costs"] = costs.copy()
            return costs

        cfg = CemConfig(num_samples=16, elite_count=15, max_iters=1,
                        initial_std=1.0)
        mean, _, history = cross_entropy_minimize(
            objective, np.ones(3), np.eye(3), cfg, rng_seed=2)
        cands, costs = rng_costs["candidates"], rng_costs["costs"]
        elite = cands[costs <= history[0].threshold]
        np.testing.assert_allclose(mean, elite.mean(axis=0), rtol=1e-12)

    def test_monotone_threshold_with_common_random_numbers(self):
        target = np.array([0.8, 0.3])

        def objective(candidates):
            d = candidates - target
            return np.einsum("kp,kp->k", d, d)

        cfg = CemConfig(num_samples=32, elite_count=4, max_iters=25,
                        tolerance=0.0, common_random_numbers=True,
                        initial_std=0.5, covariance="full")
        _, _, history = cross_entropy_minimize(objective, np.zeros(2),
                                               0.25 * np.eye(2), cfg, 7)
        thresholds = [h.threshold for h in history]
        assert all(b <= a + 1e-12 for a, b in zip(thresholds, thresholds[1:]))

    def test_open_loop_lq_cost_near_oracle(self):
        model, cost = lq_setup()
        N, dt = 40, 0.05
        oracle = lq_analytic_oracle(N, dt, 1.0, 1.0)
        cfg = CemConfig(num_samples=128, elite_count=16, max_iters=200,
                        tolerance=1e-7, initial_std=0.5)
        initial = ControlSequence.zeros(N, 1, dt)
        optimized, history = cem_trajopt(model, cost, initial, np.array([1.0]),
                                         cfg, rng_seed=0)
        from picontrol.core import NoiseSequence, rollout_batch
        batch = rollout_batch(model, cost, optimized,
                              NoiseSequence(samples=np.zeros((1, N, 1))),
                              np.array([1.0]))
        j_cem = batch.total_costs[0]
        assert j_cem <= 1.10 * oracle.optimal_cost(1.0)

    def test_invalid_elite_count(self):
        with pytest.raises(ConfigurationError):
            CemConfig(num_samples=8, elite_count=8)


def lq_linear_policy(std=0.5, floor=1e-6):
    return PolicyParams(theta=np.zeros(1), sigma=np.array([[std ** 2]]),
                        policy_kind="linear_feature", control_dim=1,
                        feature_fn=lambda t, x: np.asarray(x, dtype=float),
                        covariance_floor=floor)


class TestPi2Cma:
    def test_temporal_weights_formula(self):
        N = 3
        steps = np.arange(N)
        tau = (N - steps) / float(np.sum(N - steps))
        np.testing.assert_allclose(tau, [0.5, 1.0 / 3.0, 1.0 / 6.0])
        assert tau.sum() == pytest.approx(1.0)

    def test_single_sample_adopts_its_parameters(self):
        model, cost = lq_setup()
        params = lq_linear_policy()
        cfg = Pi2CmaConfig(num_samples=1, horizon=4, dt=0.1,
                           initial_state=np.array([1.0]))
        from picontrol.core import derive_seed
        rng = np.random.Generator(np.random.Philox(key=derive_seed(11, 0)))
        L = np.linalg.cholesky(params.sigma)
        thetas = params.theta + rng.standard_normal((1, 4, 1)) @ L.T
        tau = (4 - np.arange(4)) / np.sum(4 - np.arange(4))
        expected = tau @ thetas[0]
        out = pi2_cma_iterate(model, cost, params, cfg, rng_seed=11)
        np.testing.assert_allclose(out.theta, expected, rtol=1e-12)

    def test_weight_rows_sum_to_one(self):
        from picontrol.controllers import _column_softmax
        rng = np.random.default_rng(0)
        G = np.abs(rng.normal(size=(16, 7)))
        W = _column_softmax(G, 0.5)
        np.testing.assert_allclose(W.sum(axis=0), np.ones(7), atol=1e-12)

    def test_covariance_stays_floored_and_symmetric(self):
        model, cost = lq_setup()
        params = lq_linear_policy(std=0.3, floor=1e-6)
        cfg = Pi2CmaConfig(num_samples=8, horizon=6, dt=0.1,
                           initial_state=np.array([1.0]))
        out = pi2_cma_iterate(model, cost, params, cfg, rng_seed=1)
        assert np.allclose(out.sigma, out.sigma.T)
        assert np.min(np.linalg.eigvalsh(out.sigma)) >= 1e-6 * (1 - 1e-9)

    def test_improves_lq_policy(self):
        model, cost = lq_setup()
        params = lq_linear_policy(std=0.5)
        cfg = Pi2CmaConfig(num_samples=32, horizon=40, dt=0.05,
                           temperature=0.02, initial_state=np.array([1.0]))
        from picontrol.controllers import pi2_cma_optimize
        before = closed_loop_cost(model, cost, params, np.array([1.0]), 40, 0.05)
        params, history = pi2_cma_optimize(model, cost, params, cfg, 40, 0)
        assert history[-1] < before


class TestLinearPolicyUpdate:
    def test_equal_costs_give_mean_shift(self):
        params = lq_linear_policy()
        pert = np.array([[0.4], [-0.2], [0.1]])
        out = linear_policy_update(params, pert, np.full(3, 2.0), 1.0)
        np.testing.assert_allclose(out.theta, pert.mean(axis=0))

    def test_single_sample(self):
        params = lq_linear_policy()
        out = linear_policy_update(params, np.array([[0.7]]), np.array([5.0]), 1.0)
        np.testing.assert_allclose(out.theta, [0.7])

    def test_two_sample_tanh_shift(self):
        # perturbations [+d, -d] with costs [c + gap, c]: the update moves
        # toward -d by d * tanh(gap / (2 lambda)).
        d, gap, lam = 0.3, 0.8, 0.7
        params = lq_linear_policy()
        out = linear_policy_update(params, np.array([[d], [-d]]),
                                   np.array([1.0 + gap, 1.0]), lam)
        np.testing.assert_allclose(out.theta, [-d * np.tanh(gap / (2 * lam))],
                                   rtol=1e-12)

    def test_kind_mismatch(self):
        params = PolicyParams(theta=np.zeros(1), sigma=np.eye(1),
                              policy_kind="nonlinear",
                              policy_fn=lambda t, x, th: th)
        with pytest.raises(ConfigurationError):
            linear_policy_update(params, np.zeros((1, 1)), np.zeros(1), 1.0)


class TestNonlinearPolicyUpdate:
    @staticmethod
    def linear_nonlinear_policy():
        # A policy linear in theta declared through the nonlinear interface.
        H = np.array([[1.3]])
        return PolicyParams(
            theta=np.array([0.2]), sigma=np.eye(1), policy_kind="nonlinear",
            control_dim=1,
            policy_fn=lambda t, x, th: H @ np.atleast_1d(th)), H

    def test_linear_policy_reduces_to_linear_rule(self):
        params, H = self.linear_nonlinear_policy()
        pert = np.array([[0.3], [-0.5], [0.1]])
        costs = np.array([2.0, 1.0, 3.0])
        out = nonlinear_policy_update(params, pert, costs, 1.0,
                                      eval_point=(0.0, np.zeros(1)))
        from picontrol.weights import softmax_weights
        w = softmax_weights(costs, 1.0).weights
        np.testing.assert_allclose(out.theta, params.theta + w @ pert,
                                   rtol=1e-6)

    def test_single_sample_linear_policy(self):
        params, _ = self.linear_nonlinear_policy()
        out = nonlinear_policy_update(params, np.array([[0.4]]),
                                      np.array([1.0]), 1.0,
                                      eval_point=(0.0, np.zeros(1)))
        np.testing.assert_allclose(out.theta, params.theta + 0.4, rtol=1e-6)

    def test_fd_matches_analytic_jacobian(self):
        # Quadratic-in-theta scalar policy: u = a th^2 + b th.
        a, b = 0.7, -0.4

        def policy_fn(t, x, th):
            return np.atleast_1d(a * th[0] ** 2 + b * th[0])

        def jacobian_fn(t, x, th):
            return np.array([[2 * a * th[0] + b]])

        params = PolicyParams(theta=np.array([0.5]), sigma=np.eye(1),
                              policy_kind="nonlinear", policy_fn=policy_fn)
        pert = np.array([[0.2], [-0.3]])
        costs = np.array([1.0, 2.0])
        analytic = nonlinear_policy_update(params, pert, costs, 1.0,
                                           eval_point=(0.0, np.zeros(1)),
                                           jacobian_fn=jacobian_fn)
        fd = nonlinear_policy_update(params, pert, costs, 1.0,
                                     eval_point=(0.0, np.zeros(1)),
                                     fd_step=1e-6)
        np.testing.assert_allclose(fd.theta, analytic.theta, rtol=1e-4)

    def test_zero_jacobian_falls_back_with_warning(self):
        params = PolicyParams(theta=np.array([0.0]), sigma=np.eye(1),
                              policy_kind="nonlinear",
                              policy_fn=lambda t, x, th: np.atleast_1d(0.0 * th[0]))
        with pytest.warns(RuntimeWarning, match="Jacobian"):
            out = nonlinear_policy_update(params, np.array([[0.5]]),
                                          np.array([1.0]), 1.0,
                                          eval_point=(0.0, np.zeros(1)))
        np.testing.assert_allclose(out.theta, [0.5])

    def test_kind_mismatch(self):
        params = lq_linear_policy()
        with pytest.raises(ConfigurationError):
            nonlinear_policy_update(params, np.zeros((1, 1)), np.zeros(1), 1.0,
                                    eval_point=(0.0, np.zeros(1)))


class TestPolicyRollout:
    def test_constant_gain_matches_hand_simulation(self):
        model, cost = lq_setup()
        params = lq_linear_policy()
        theta = np.array([[-0.8]])
        states, controls, ctg, diverged = policy_rollout_batch(
            model, cost, params, theta, np.array([1.0]), 5, 0.1)
        x = 1.0
        for i in range(5):
            u = -0.8 * x
            np.testing.assert_allclose(controls[0, i, 0], u, rtol=1e-12)
            x = x + u * 0.1
            np.testing.assert_allclose(states[0, i + 1, 0], x, rtol=1e-12)
        assert not diverged.any()
