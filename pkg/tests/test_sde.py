import math

import numpy as np
import pytest

from quadbsde._stats import ExponentialMomentError
from quadbsde.model import TimeGrid
from quadbsde.sde import (
    SdeCoefficients,
    certify_sde_coefficients,
    estimate_exp_moment,
    gronwall_check,
    simulate_brownian,
    simulate_sde,
)

import oracles


def test_brownian_deterministic_per_seed():
    g = TimeGrid(1.0, 16)
    a = simulate_brownian(g, 500, 2, seed=4)
    b = simulate_brownian(g, 500, 2, seed=4)
    assert np.array_equal(a.increments, b.increments)


def test_brownian_increment_variance():
    M = 100_000
    g = TimeGrid(1.0, 1)
    inc = simulate_brownian(g, M, 1, seed=0).increments.ravel()
    assert abs(inc.var() / g.dt - 1) <= 5 * math.sqrt(2 / M)
    assert abs(inc.mean()) <= 5 / math.sqrt(M)


def test_brownian_distinct_seeds_uncorrelated():
    M = 100_000
    g = TimeGrid(1.0, 1)
    a = simulate_brownian(g, M, 1, seed=1).increments.ravel()
    b = simulate_brownian(g, M, 1, seed=2).increments.ravel()
    assert abs(np.corrcoef(a, b)[0, 1]) <= 5 / math.sqrt(M)


def test_brownian_per_step_variance():
    M, N = 40_000, 8
    g = TimeGrid(2.0, N)
    inc = simulate_brownian(g, M, 1, seed=3).increments[:, :, 0]
    se = g.dt * math.sqrt(2 / M)
    assert np.all(np.abs(inc.var(axis=0) - g.dt) <= 5 * se)


def test_brownian_blocks_concatenate():
    g = TimeGrid(1.0, 4)
    whole = simulate_brownian(g, 100, 1, seed=5)
    part = simulate_brownian(g, 40, 1, seed=5, path_start=60)
    assert np.array_equal(whole.increments[60:], part.increments)


def test_frozen_dynamics():
    g = TimeGrid(1.0, 10)
    c = SdeCoefficients(lambda t, x: 0 * x, lambda t, x: np.zeros((x.shape[0], 1, 1)), 0.0, 0.0)
    ens = simulate_sde(c, 0.0, [1.3], simulate_brownian(g, 50, 1, seed=0))
    assert np.all(ens.states == 1.3)


def test_brownian_marginal():
    M = 100_000
    ens = simulate_sde(SdeCoefficients.brownian(), 0.0, [0.0], simulate_brownian(TimeGrid(1.0, 4), M, 1, seed=6))
    xT = ens.states[:, -1, 0]
    assert abs(xT.mean()) <= 4 / math.sqrt(M)
    assert abs(xT.var() - 1.0) <= 4 * math.sqrt(2 / M)


def test_states_frozen_before_start():
    g = TimeGrid(1.0, 8)
    ens = simulate_sde(SdeCoefficients.brownian(), 0.5, [2.0], simulate_brownian(g, 20, 1, seed=0))
    assert np.all(ens.states[:, :5, 0] == 2.0)
    assert not np.all(ens.states[:, 5:, 0] == 2.0)
    with pytest.raises(ValueError):
        simulate_sde(SdeCoefficients.brownian(), 0.3, [2.0], simulate_brownian(g, 20, 1, seed=0))


def test_ou_variance_matches_closed_form():
    M, N = 100_000, 512
    ens = simulate_sde(SdeCoefficients.ornstein_uhlenbeck(1.0, 1.0), 0.0, [0.0],
                       simulate_brownian(TimeGrid(1.0, N), M, 1, seed=8))
    var = ens.states[:, -1, 0].var(ddof=1)
    se = var * math.sqrt(2 / (M - 1))
    exact = oracles.ou_variance(1.0, 1.0, 1.0)
    assert exact == pytest.approx(0.43233235838169365, abs=1e-15)
    _, euler = oracles.euler_ou_moments(1.0, 1.0, 1.0, N)
    assert abs(var - exact) <= 3 * se + abs(euler - exact)


def test_euler_weak_order_one():
    # exact Euler-chain variances; the bias ratio over N -> 2N should be near 2
    _, v64 = oracles.euler_ou_moments(1.0, 1.0, 1.0, 64)
    exact = oracles.ou_variance(1.0, 1.0, 1.0)
    biases = [abs(oracles.euler_ou_moments(1.0, 1.0, 1.0, n)[1] - exact) for n in (64, 128, 256, 512)]
    ratios = [a / b for a, b in zip(biases, biases[1:])]
    assert all(1.5 <= r <= 3 for r in ratios)


def test_euler_mean_bias_decreases():
    # mean bias for x0 = 1: exact e^{-1}, chain (1 - dt)^N
    biases = [abs(oracles.euler_ou_moments(1.0, 1.0, 1.0, n, x0=1.0)[0] - math.exp(-1)) for n in (64, 128, 256, 512)]
    ratios = [a / b for a, b in zip(biases, biases[1:])]
    assert all(1.5 <= r <= 3 for r in ratios)


def test_simulated_ou_matches_euler_chain_mean():
    M, N = 50_000, 64
    ens = simulate_sde(SdeCoefficients.ornstein_uhlenbeck(1.0, 1.0), 0.0, [1.0],
                       simulate_brownian(TimeGrid(1.0, N), M, 1, seed=9))
    mean, var = oracles.euler_ou_moments(1.0, 1.0, 1.0, N, x0=1.0)
    assert abs(ens.states[:, -1, 0].mean() - mean) <= 4 * math.sqrt(var / M)


def test_certify_coefficients():
    assert certify_sde_coefficients(SdeCoefficients.ornstein_uhlenbeck(2.0, 0.5)).passed
    bad = SdeCoefficients.scalar(lambda t, x: 3.0 * x, lambda t, x: 1.0, beta=1.0, sigma_bound=1.0)
    assert not certify_sde_coefficients(bad).passed


def test_exp_moment_zero_lambda_is_one():
    ens = simulate_sde(SdeCoefficients.brownian(), 0.0, [0.0], simulate_brownian(TimeGrid(1.0, 8), 100, 1, seed=0))
    est = estimate_exp_moment(ens, 0.0, 1.0)
    assert est.value == 1.0


def test_exp_moment_rejects_p_two():
    ens = simulate_sde(SdeCoefficients.brownian(), 0.0, [0.0], simulate_brownian(TimeGrid(1.0, 8), 10, 1, seed=0))
    with pytest.raises(ValueError, match="p < 2"):
        estimate_exp_moment(ens, 1.0, 2.0)


def test_exp_moment_against_brute_force():
    M, N = 100_000, 256
    ens = simulate_sde(SdeCoefficients.brownian(), 0.0, [0.0], simulate_brownian(TimeGrid(1.0, N), M, 1, seed=12))
    est = estimate_exp_moment(ens, 1.0, 1.0)
    brute, brute_se = oracles.brute_force_exp_sup(1.0, 1.0, N, M, seed=99)
    assert abs(est.value - brute) <= 3 * math.hypot(est.stderr, brute_se)
    # the grid maximum sits below the continuous one
    assert est.value < oracles.exp_sup_abs_brownian(1.0, 1.0)
    assert est.fitted_C >= 1.0 and math.isfinite(est.fitted_C)


def test_exp_moment_overflow():
    g = TimeGrid(1.0, 4)
    ens = simulate_sde(SdeCoefficients.brownian(), 0.0, [30.0], simulate_brownian(g, 100, 1, seed=0))
    with pytest.raises(ExponentialMomentError, match="appears infinite"):
        estimate_exp_moment(ens, 5.0, 1.9)


def test_gronwall_bound_pathwise():
    c = SdeCoefficients.scalar(lambda t, x: 0.5 - 0.8 * np.sin(x), lambda t, x: 1 + 0.3 * np.cos(x),
                               beta=0.8, sigma_bound=1.3)
    assert certify_sde_coefficients(c).passed
    ens = simulate_sde(c, 0.0, [1.0], simulate_brownian(TimeGrid(1.0, 64), 5000, 1, seed=3))
    rep = gronwall_check(ens, c)
    assert rep.passed and rep.max_ratio <= 1.0


def test_simulation_independent_of_batching():
    c = SdeCoefficients.ornstein_uhlenbeck(1.0, 1.0)
    g = TimeGrid(1.0, 16)
    whole = simulate_sde(c, 0.0, [0.5], simulate_brownian(g, 200, 1, seed=1))
    part = simulate_sde(c, 0.0, [0.5], simulate_brownian(g, 80, 1, seed=1, path_start=120))
    assert np.array_equal(whole.states[120:], part.states)
