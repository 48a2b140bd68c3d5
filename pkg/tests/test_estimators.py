"""Monte-Carlo, importance-sampling, and multiple-importance-sampling estimators."""

import numpy as np
import pytest
from scipy import stats

from picontrol.errors import (ConfigurationError, InsufficientSamplesError,
                              InvalidSchemeError)
from picontrol.weights import (importance_weight_path, is_estimate,
                               mc_estimate, mis_estimate)


class TestMcEstimate:
    def test_constant_values(self):
        mean, se = mc_estimate(np.full(5, 3.0))
        assert mean == 3.0
        assert se == 0.0

    def test_two_point_average(self):
        mean, _ = mc_estimate(np.array([0.0, 2.0]))
        assert mean == 1.0

    def test_standard_normal_mean(self):
        # CLT bound: 5 sigma of 1/sqrt(K) = 0.0158 < 0.02 for K = 1e5.
        draws = np.random.default_rng(123).standard_normal(100_000)
        mean, se = mc_estimate(draws)
        assert abs(mean) < 0.02
        np.testing.assert_allclose(se, 1.0 / np.sqrt(100_000), rtol=0.02)

    def test_insufficient_samples(self):
        with pytest.raises(InsufficientSamplesError):
            mc_estimate(np.array([1.0]))


class TestIsEstimate:
    def test_unit_rn_equals_mc_mean(self):
        values = np.array([1.0, 2.0, 3.0, 4.0])
        assert is_estimate(values, np.ones(4)) == mc_estimate(values)[0]

    def test_mass_relocation_on_constants(self):
        assert is_estimate(np.array([1.0, 1.0]), np.array([2.0, 0.0])) == 1.0

    def test_gaussian_second_moment(self):
        # Estimate E_Q[X^2] = 1 for Q = N(0,1) sampling from P = N(0, 2^2).
        rng = np.random.default_rng(7)
        x = rng.normal(0.0, 2.0, size=100_000)
        rn = stats.norm.pdf(x, 0, 1) / stats.norm.pdf(x, 0, 2)
        values = x ** 2
        est = is_estimate(values, rn)
        se = np.std(values * rn, ddof=1) / np.sqrt(x.size)
        assert abs(est - 1.0) < 3 * se

    def test_length_mismatch(self):
        with pytest.raises(ConfigurationError):
            is_estimate(np.ones(3), np.ones(4))

    def test_negative_rn_rejected(self):
        with pytest.raises(ConfigurationError):
            is_estimate(np.ones(2), np.array([1.0, -0.5]))


def _two_gaussian_groups(rng, n1=500, n2=500):
    """Samples from P1 = N(0, 1.5^2) and P2 = N(1, 2^2) targeting Q = N(0,1)."""
    p1 = stats.norm(0.0, 1.5)
    p2 = stats.norm(1.0, 2.0)
    q = stats.norm(0.0, 1.0)
    x1 = p1.rvs(size=n1, random_state=rng)
    x2 = p2.rvs(size=n2, random_state=rng)
    groups = [
        (x1 ** 2, q.pdf(x1) / p1.pdf(x1), n1),
        (x2 ** 2, q.pdf(x2) / p2.pdf(x2), n2),
    ]
    cross = [
        np.stack([p1.pdf(x1) / p1.pdf(x1), p2.pdf(x1) / p1.pdf(x1)]),
        np.stack([p1.pdf(x2) / p2.pdf(x2), p2.pdf(x2) / p2.pdf(x2)]),
    ]
    return groups, cross


class TestMisEstimate:
    def test_single_group_flat_equals_is(self):
        rng = np.random.default_rng(1)
        values = rng.normal(size=64)
        rn = np.abs(rng.normal(size=64))
        assert mis_estimate([(values, rn, 64)], scheme="flat") == \
            is_estimate(values, rn)

    def test_identical_proposals_balance_reduces_to_pooled(self):
        rng = np.random.default_rng(2)
        v1, v2 = rng.normal(size=32), rng.normal(size=32)
        r1, r2 = np.abs(rng.normal(size=32)), np.abs(rng.normal(size=32))
        # Identical proposals: every density ratio is 1, so gamma = 1.
        cross = [np.ones((2, 32)), np.ones((2, 32))]
        bal = mis_estimate([(v1, r1, 32), (v2, r2, 32)],
                           scheme="balance_heuristic", cross_densities=cross)
        pooled = is_estimate(np.concatenate([v1, v2]), np.concatenate([r1, r2]))
        np.testing.assert_allclose(bal, pooled, rtol=1e-12)

    def test_gaussian_second_moment_both_schemes(self):
        rng = np.random.default_rng(11)
        groups, cross = _two_gaussian_groups(rng, 50_000, 50_000)
        flat = mis_estimate(groups, scheme="flat")
        bal = mis_estimate(groups, scheme="balance_heuristic",
                           cross_densities=cross)
        # 3-standard-error bands around the analytic moment E[X^2] = 1.
        prods = np.concatenate([g[0] * g[1] for g in groups])
        se = np.std(prods, ddof=1) / np.sqrt(prods.size)
        assert abs(flat - 1.0) < 3 * se
        assert abs(bal - 1.0) < 3 * se

    def test_balance_variance_not_worse_than_flat(self):
        rng = np.random.default_rng(42)
        flats, bals = [], []
        for _ in range(200):
            groups, cross = _two_gaussian_groups(rng, 200, 200)
            flats.append(mis_estimate(groups, scheme="flat"))
            bals.append(mis_estimate(groups, scheme="balance_heuristic",
                                     cross_densities=cross))
        assert np.var(bals) <= np.var(flats)

    def test_inconsistent_diagonal_rejected(self):
        values = np.ones(4)
        rn = np.ones(4)
        cross = [np.stack([np.full(4, 2.0), np.ones(4)]),  # dP1/dP1 != 1
                 np.ones((2, 4))]
        with pytest.raises(InvalidSchemeError):
            mis_estimate([(values, rn, 4), (values, rn, 4)],
                         scheme="balance_heuristic", cross_densities=cross)

    def test_unknown_scheme(self):
        with pytest.raises(ConfigurationError):
            mis_estimate([(np.ones(2), np.ones(2), 2)], scheme="power")


class TestImportanceWeightPath:
    def test_zero_controls(self):
        # Control terms vanish: log w = -G0/lambda = -1 for G0 = lambda.
        lw = importance_weight_path(np.zeros((3, 1)), np.zeros((3, 1)),
                                    state_cost=2.0, temperature=2.0)
        assert lw == -1.0

    def test_constant_control_quadratic_term(self):
        # zero noise, u = 1, N=2, dt=1, G0=0: log w = -sum 0.5 u^2 dt = -1.
        lw = importance_weight_path(np.ones((2, 1)), np.zeros((2, 1)),
                                    state_cost=0.0, temperature=1.0, dt=1.0)
        assert lw == -1.0

    def test_against_termwise_summation(self):
        rng = np.random.default_rng(3)
        u = rng.normal(size=(5, 2))
        dw = rng.normal(size=(5, 2)) * 0.1
        g0, lam, dt = 1.7, 0.8, 0.05
        lw = importance_weight_path(u, dw, g0, lam, dt=dt)
        acc = 0.0
        for i in range(5):
            for j in range(2):
                acc -= 0.5 * u[i, j] ** 2 * dt + u[i, j] * dw[i, j]
        acc -= g0 / lam
        np.testing.assert_allclose(lw, acc, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            importance_weight_path(np.zeros((2, 1)), np.zeros((3, 1)), 0.0, 1.0)
