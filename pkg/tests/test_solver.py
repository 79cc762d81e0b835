import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadbsde.model import AlphaProcess, AssumptionParams, DriverSpec, TerminalSpec, TimeGrid
from quadbsde.sde import SdeCoefficients, simulate_brownian, simulate_sde
from quadbsde.solver import (
    PicardConfig,
    PicardDivergence,
    RegressionBasis,
    SingularRegression,
    build_truncated_problem,
    cole_hopf_solve,
    solve_backward_lsmc,
)


def ensemble(N=64, M=20_000, seed=0, T=1.0, d=1):
    return simulate_brownian(TimeGrid(T, N), M, d, seed=seed)


@pytest.fixture(scope="module")
def bm64():
    return ensemble()


def test_zero_driver_constant_terminal(bm64):
    sol = solve_backward_lsmc(DriverSpec.zero(AssumptionParams.simple()), TerminalSpec.constant(2.5), bm64)
    assert np.max(np.abs(sol.Y - 2.5)) < 1e-10
    assert np.max(np.abs(sol.Z)) < 1e-10
    assert sol.Y0 == 2.5


def test_linear_driver_exponential_growth():
    ens = ensemble(N=256, M=100_000, seed=1)
    drv = DriverSpec.linear(AssumptionParams.simple(beta=1.0))
    sol = solve_backward_lsmc(drv, TerminalSpec.constant(1.0), ens)
    assert abs(sol.Y0 - math.e) < 0.05
    # implicit Euler in y: exactly (1 - dt)^{-N}
    assert sol.Y0 == pytest.approx((1 - 1 / 256) ** -256, rel=1e-9)


@settings(max_examples=20, deadline=None)
@given(k=st.floats(-2, 2), a=st.floats(0, 2), K=st.floats(-3, 3), N=st.integers(1, 40))
def test_deterministic_problems_follow_implicit_recursion(k, a, K, N):
    p = AssumptionParams.simple(beta=abs(k), alpha=a)
    sol = solve_backward_lsmc(DriverSpec.linear(p, y_coef=k), TerminalSpec.constant(K), ensemble(N=N, M=50))
    dt = 1.0 / N
    y = K
    for _ in range(N):
        y = (y + dt * a) / (1 - dt * k)
    assert sol.Y0 == pytest.approx(y, rel=1e-9, abs=1e-9)


def test_quadratic_brownian_terminal():
    ens = ensemble(N=128, M=100_000, seed=2)
    sol = solve_backward_lsmc(DriverSpec.quadratic(AssumptionParams.simple()), TerminalSpec.brownian(), ens)
    assert abs(sol.Y0 - 0.5) < 0.02
    assert abs(np.mean(sol.Z) - 1.0) < 0.02
    times = ens.grid.times[:, None]
    exact = ens.brownian[:, :, 0].T + (1 - times) / 2
    assert np.mean(np.abs(sol.Y - exact)) < 0.01


def test_terminal_layer_is_bitwise_xi(bm64):
    term = TerminalSpec.brownian("abs")
    sol = solve_backward_lsmc(DriverSpec.quadratic(AssumptionParams.simple()), term, bm64)
    assert np.array_equal(sol.Y[-1], term.sample(bm64))


def test_y0_is_layer_mean(bm64):
    sol = solve_backward_lsmc(DriverSpec.linear_quadratic(AssumptionParams.simple(beta=0.5, alpha=0.2)),
                              TerminalSpec.brownian(), bm64)
    assert sol.Y0 == pytest.approx(np.mean(sol.Y[0]), abs=1e-14)
    assert sol.Y0 == pytest.approx(np.mean(sol.eta), abs=1e-9)


def test_picard_divergence_reports_layer():
    drv = DriverSpec.linear(AssumptionParams.simple(beta=1000.0))
    with pytest.raises(PicardDivergence) as err:
        solve_backward_lsmc(drv, TerminalSpec.constant(1.0), ensemble(N=4, M=10), cfg=PicardConfig(max_iter=20))
    assert err.value.layer == 3


def test_singular_regression_reports_condition(bm64):
    basis = RegressionBasis(degree=3, max_cond=1.0 + 1e-9)
    with pytest.raises(SingularRegression) as err:
        solve_backward_lsmc(DriverSpec.zero(AssumptionParams.simple()), TerminalSpec.brownian(), bm64, basis)
    assert err.value.cond > 1.0


def test_z_clipping_counts_events_but_reports_raw_z(bm64):
    sol = solve_backward_lsmc(DriverSpec.quadratic(AssumptionParams.simple()), TerminalSpec.brownian(), bm64,
                              cfg=PicardConfig(z_clip=0.5))
    assert sol.diagnostics["z_clip_events"] > 0
    assert abs(np.mean(sol.Z) - 1.0) < 0.05


def test_dimension_mismatch(bm64):
    with pytest.raises(ValueError):
        solve_backward_lsmc(DriverSpec.quadratic(AssumptionParams.simple(), d=2), TerminalSpec.brownian(), bm64)


def test_two_dimensional_quadratic():
    # xi = B^1_T + B^2_T: Y_0 = gamma T (1 + 1) / 2
    ens = ensemble(N=32, M=50_000, seed=5, d=2)
    term = TerminalSpec("brownian", func=lambda b: b.sum(axis=1))
    sol = solve_backward_lsmc(DriverSpec.quadratic(AssumptionParams.simple(), d=2), term, ens)
    assert abs(sol.Y0 - 1.0) < 4 * sol.y0_stderr + 0.01


def test_state_basis_with_forward_process():
    ens = simulate_sde(SdeCoefficients.brownian(), 0.0, [0.0], ensemble(N=64, M=50_000, seed=6))
    term = TerminalSpec.state(lambda x: x)
    sol = solve_backward_lsmc(DriverSpec.quadratic(AssumptionParams.simple()), term, ens,
                              RegressionBasis(kind="state"))
    assert abs(sol.Y0 - 0.5) < 0.02


# --- oracle ---------------------------------------------------------------


def test_oracle_constant_terminal(bm64):
    alpha = AlphaProcess.constant(0.7, 1.0)
    sol = cole_hopf_solve(1.3, alpha, np.full(bm64.M, 2.0), bm64)
    expected = 2.0 + 0.7 * (1 - bm64.grid.times)
    assert np.max(np.abs(sol.Y - expected[:, None])) < 1e-12
    assert np.max(np.abs(sol.Z)) < 1e-12


def test_oracle_brownian_terminal_interior():
    ens = ensemble(N=64, M=100_000, seed=7)
    xi = ens.brownian[:, -1, 0]
    sol = cole_hopf_solve(1.0, AlphaProcess.constant(0.0, 1.0), xi, ens)
    exact = ens.brownian[:, :, 0].T + (1 - ens.grid.times[:, None]) / 2
    assert np.mean(np.abs(sol.Y - exact)) < 0.005
    assert abs(np.mean(sol.Z) - 1.0) < 0.01
    assert abs(sol.Y0 - 0.5) <= 3 * sol.y0_stderr


def test_oracle_small_gamma_limit(bm64):
    xi = bm64.brownian[:, -1, 0]
    sol = cole_hopf_solve(1e-3, AlphaProcess.constant(0.0, 1.0), xi, bm64)
    assert abs(sol.Y0 - xi.mean()) < 1e-2


def test_oracle_large_terminal_values_stay_finite(bm64):
    xi = 400.0 + 50 * bm64.brownian[:, -1, 0]
    sol = cole_hopf_solve(2.0, AlphaProcess.constant(0.0, 1.0), xi, bm64)
    assert np.isfinite(sol.Y0) and sol.Y0 > xi.mean()
    assert np.all(np.isfinite(sol.Y)) and np.all(np.isfinite(sol.Z))


# --- truncation -----------------------------------------------------------


def test_truncation_sentinels_return_same_objects():
    drv = DriverSpec.quadratic(AssumptionParams.simple())
    term = TerminalSpec.brownian()
    assert build_truncated_problem(drv, term, None, math.inf) == (drv, term)


def test_truncation_clamps(bm64):
    drv, term = build_truncated_problem(DriverSpec.quadratic(AssumptionParams.simple()),
                                        TerminalSpec.brownian(), 1, 1)
    bT = bm64.brownian[:, -1, 0]
    assert np.array_equal(term.sample(bm64), np.maximum(-1, np.minimum(bT, 1)))


def test_truncated_driver_cuts_after_alpha_budget():
    p = AssumptionParams(0.0, 1.0, AlphaProcess.constant(2.0, 1.0), 1.0)
    drv, _ = build_truncated_problem(DriverSpec.linear(p, y_coef=0.0), TerminalSpec.constant(0.0), 1, 1)
    assert drv.cutoff_pos == pytest.approx(0.5)
    sol = solve_backward_lsmc(drv, TerminalSpec.constant(0.0), ensemble(N=100, M=10))
    assert sol.Y0 == pytest.approx(1.0 + 2.0 / 100, abs=1e-12)  # left-point grid analogue of the cutoff


@settings(max_examples=30, deadline=None)
@given(b=st.lists(st.floats(0, 30), min_size=1, max_size=30), n=st.integers(1, 20), k=st.integers(1, 20))
def test_truncated_terminal_monotone(b, n, k):
    class E:
        M = len(b)
        brownian = np.array(b)[:, None, None] * np.ones((1, 2, 1))
        states = None

    drv = DriverSpec.quadratic(AssumptionParams.simple())
    _, t1 = build_truncated_problem(drv, TerminalSpec.brownian(), n, 1)
    _, t2 = build_truncated_problem(drv, TerminalSpec.brownian(), n + k, 1)
    assert np.all(t1.sample(E) <= t2.sample(E))


def test_linear_tail_cells_keep_pathwise_error_small():
    # a cubic on the unbounded end cells extrapolates badly on the extreme paths
    ens = ensemble(N=32, M=100_000, seed=4)
    exact = ens.brownian[:, :, 0].T + (1 - ens.grid.times[:, None]) / 2
    drv = DriverSpec.quadratic(AssumptionParams.simple())
    linear = solve_backward_lsmc(drv, TerminalSpec.brownian(), ens, RegressionBasis(tail_degree=1))
    cubic = solve_backward_lsmc(drv, TerminalSpec.brownian(), ens, RegressionBasis(tail_degree=3))
    assert np.max(np.abs(linear.Y - exact)) < 0.1
    assert np.max(np.abs(cubic.Y - exact)) > np.max(np.abs(linear.Y - exact))


def test_tail_degree_validated():
    with pytest.raises(ValueError, match="tail_degree"):
        RegressionBasis(tail_degree=-1)
