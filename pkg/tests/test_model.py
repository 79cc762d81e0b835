import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadbsde.model import (
    AlphaProcess,
    AssumptionParams,
    DriverSpec,
    LinearGrowth,
    TabulatedGrowth,
    TerminalSpec,
    TimeGrid,
    BoundCertificate,
    certify_assumptions,
    eval_driver,
)

finite = st.floats(-50, 50, allow_nan=False)


def params(gamma=1.0, beta=0.0, alpha=0.0, T=1.0):
    return AssumptionParams.simple(gamma=gamma, beta=beta, alpha=alpha, T=T)


# --- eval_driver examples -------------------------------------------------


def test_pure_quadratic_value():
    drv = DriverSpec.quadratic(params(gamma=2.0))
    assert eval_driver(drv, 0.3, 17.0, [1.0]) == 1.0


@given(t=st.floats(0, 1), y=finite, z=finite)
def test_zero_family_is_zero(t, y, z):
    assert eval_driver(DriverSpec.zero(params()), t, y, [z]) == 0.0


def test_linear_plus_quadratic_value():
    # 0.5 + 1 * (-1) + (2 / 2) * (1 + 1)
    drv = DriverSpec.linear_quadratic(params(gamma=2.0, beta=1.0, alpha=0.5), d=2)
    assert eval_driver(drv, 0.5, -1.0, [1.0, 1.0]) == pytest.approx(1.5, abs=1e-15)


def test_eval_driver_rejects_bad_dimension_and_time():
    drv = DriverSpec.quadratic(params(), d=2)
    with pytest.raises(ValueError, match="shape"):
        eval_driver(drv, 0.5, 0.0, [1.0])
    with pytest.raises(ValueError, match="outside"):
        eval_driver(drv, 1.5, 0.0, [1.0, 0.0])


# --- parameter validation -------------------------------------------------


@pytest.mark.parametrize(
    "kwargs,msg",
    [({"gamma": 0.0}, "gamma > 0"), ({"beta": -1.0}, "beta >= 0"), ({"T": 0.0}, "T > 0")],
)
def test_params_invariants(kwargs, msg):
    with pytest.raises(ValueError, match=msg):
        AssumptionParams.simple(**kwargs)


def test_phi_must_vanish_at_zero_and_increase():
    alpha = AlphaProcess.constant(0.0, 1.0)
    with pytest.raises(ValueError, match="phi\\(0\\) = 0"):
        AssumptionParams(0.0, 1.0, alpha, 1.0, phi=lambda x: np.asarray(x) + 1.0)
    with pytest.raises(ValueError, match="nondecreasing"):
        AssumptionParams(0.0, 1.0, alpha, 1.0, phi=TabulatedGrowth([0.0, 1.0, 2.0], [0.0, 1.0, 0.5]))


def test_default_phi_is_linear_in_beta():
    p = params(beta=2.5)
    assert isinstance(p.phi, LinearGrowth) and p.phi(2.0) == 5.0


# --- alpha process --------------------------------------------------------


def test_alpha_l1_and_lookup():
    a = AlphaProcess([0.0, 0.25, 0.6, 1.0], [2.0, 0.0, 1.5])
    assert a.l1 == pytest.approx(0.5 + 0.6, abs=1e-15)
    assert a(0.1) == 2.0 and a(0.3) == 0.0 and a(1.0) == 1.5
    assert a.integral(0.2, 0.7) == pytest.approx(0.1 + 0.15, abs=1e-15)


@settings(max_examples=50)
@given(values=st.lists(st.floats(0, 10), min_size=1, max_size=6), refine=st.integers(1, 40))
def test_alpha_integral_matches_riemann_sum_on_refinements(values, refine):
    K = len(values)
    a = AlphaProcess(np.linspace(0, 1, K + 1), values)
    # a refinement of the breakpoints: every piece split into `refine` cells
    edges = np.unique(np.concatenate([np.linspace(lo, hi, refine + 1)
                                      for lo, hi in zip(a.breakpoints[:-1], a.breakpoints[1:])]))
    riemann = np.sum(a(edges[:-1]) * np.diff(edges))
    assert a.l1 == pytest.approx(riemann, rel=1e-13, abs=1e-13)


def test_weighted_integral_constant_rate():
    a = AlphaProcess.constant(1.0, 2.0)
    # int_0^1 e^{r} dr = e - 1
    assert a.weighted_integral(0.0, 1.0, 1.0) == pytest.approx(math.e - 1, rel=1e-15)
    assert a.weighted_integral(0.5, 1.5, 0.0) == pytest.approx(1.0, rel=1e-15)


def test_cutoff_and_truncate():
    a = AlphaProcess.constant(2.0, 3.0)
    assert a.cutoff_time(1.0) == pytest.approx(0.5)
    assert a.cutoff_time(100.0) == 3.0
    cut = a.truncate(0.5)
    assert cut.l1 == pytest.approx(1.0) and cut(0.7) == 0.0 and cut(0.2) == 2.0


def test_alpha_rejects_negative_values():
    with pytest.raises(ValueError):
        AlphaProcess([0.0, 1.0], [-0.1])


# --- certification --------------------------------------------------------


def test_quadratic_family_is_certified_convex():
    cert = certify_assumptions(DriverSpec.quadratic(params(gamma=3.0), d=2), budget=2000, tol=1e-9, seed=1)
    assert cert.convexity_violation <= 1e-9
    assert cert.passed


def test_abs_driver_passes_with_am_gm_alpha():
    # |z| <= 1/(2 gamma) + (gamma/2)|z|^2
    gamma = 0.7
    p = params(gamma=gamma, alpha=1.0 / (2 * gamma))
    drv = DriverSpec.convex_custom(p, lambda z: np.sqrt(np.sum(z * z, axis=-1)))
    cert = certify_assumptions(drv, budget=4000, tol=1e-9, seed=2)
    assert cert.passed and cert.growth_slack >= 0


def test_abs_driver_fails_growth_without_alpha():
    p = params(gamma=0.5, alpha=0.0)
    drv = DriverSpec.convex_custom(p, lambda z: np.sqrt(np.sum(z * z, axis=-1)))
    cert = certify_assumptions(drv, budget=4000, tol=1e-9, seed=2)
    assert cert.growth_violation > 1e-9 and not cert.passed


def test_concave_family_fails_convexity():
    drv = DriverSpec.convex_custom(params(), lambda z: -0.5 * np.sum(z * z, axis=-1))
    cert = certify_assumptions(drv, budget=500, tol=1e-6, seed=0)
    assert cert.convexity_violation > 1e-6 and not cert.passed


def test_lipschitz_violation_detected():
    drv = DriverSpec.linear(params(beta=1.0), y_coef=2.0)
    cert = certify_assumptions(drv, budget=500, tol=1e-9, seed=0)
    assert cert.lipschitz_ratio == pytest.approx(2.0)
    assert not cert.passed


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), budget=st.integers(1, 300))
def test_certificate_deterministic(seed, budget):
    drv = DriverSpec.linear_quadratic(params(gamma=1.3, beta=0.4, alpha=0.2))
    assert certify_assumptions(drv, budget, 1e-9, seed) == certify_assumptions(drv, budget, 1e-9, seed)


FAMILY_BUILDERS = [
    lambda p, d: DriverSpec.zero(p, d),
    lambda p, d: DriverSpec.linear(p, d=d),
    lambda p, d: DriverSpec.quadratic(p, d=d),
    lambda p, d: DriverSpec.linear_quadratic(p, d=d),
    lambda p, d: DriverSpec.linear_quadratic(p, y_coef=-p.beta, d=d),
]


@settings(max_examples=60, deadline=None)
@given(
    which=st.integers(0, len(FAMILY_BUILDERS) - 1),
    gamma=st.floats(1e-3, 10), beta=st.floats(0, 5), a=st.floats(0, 5), d=st.integers(1, 3),
    t=st.floats(0, 1), y=st.lists(finite, min_size=1, max_size=8), zs=st.floats(-1e3, 1e3),
)
def test_growth_bound_holds_exactly(which, gamma, beta, a, d, t, y, zs):
    p = params(gamma=gamma, beta=beta, alpha=a)
    drv = FAMILY_BUILDERS[which](p, d)
    y = np.array(y)
    z = np.full((y.size, d), zs) * np.linspace(-1, 1, y.size)[:, None]
    assert np.all(np.abs(drv.evaluate(t, y, z)) <= drv.growth_bound(t, y, z))


@settings(max_examples=40, deadline=None)
@given(gamma=st.floats(1e-2, 5), z1=finite, z2=finite, lam=st.floats(0, 1), y=finite)
def test_quadratic_midpoint_convexity(gamma, z1, z2, lam, y):
    drv = DriverSpec.linear_quadratic(params(gamma=gamma, beta=1.0, alpha=0.3))
    f = lambda z: drv.evaluate(0.2, np.array([y]), np.array([[z]]))[0]
    lhs = f(lam * z1 + (1 - lam) * z2)
    rhs = lam * f(z1) + (1 - lam) * f(z2)
    assert lhs <= rhs + 1e-12 * (1 + abs(rhs))


def test_truncated_driver_parts():
    p = AssumptionParams(0.0, 1.0, AlphaProcess.constant(1.0, 1.0), 1.0)
    drv = DriverSpec.linear(p, y_coef=0.0)
    from dataclasses import replace
    cut = replace(drv, cutoff_pos=0.5)
    assert cut.evaluate(0.4, np.zeros(1), np.zeros((1, 1)))[0] == 1.0
    assert cut.evaluate(0.6, np.zeros(1), np.zeros((1, 1)))[0] == 0.0


# --- terminals, grids, certificates --------------------------------------


class _FakeEnsemble:
    def __init__(self, b_T):
        self.M = b_T.size
        self.brownian = np.zeros((b_T.size, 2, 1))
        self.brownian[:, -1, 0] = b_T
        self.states = None


def test_terminal_kinds_and_truncation():
    ens = _FakeEnsemble(np.array([-3.0, -0.5, 0.2, 4.0]))
    assert np.array_equal(TerminalSpec.constant(2.0).sample(ens), np.full(4, 2.0))
    assert np.array_equal(TerminalSpec.brownian("abs").sample(ens), [3.0, 0.5, 0.2, 4.0])
    clamped = TerminalSpec.brownian().truncate(1, 1).sample(ens)
    assert np.array_equal(clamped, [-1.0, -0.5, 0.2, 1.0])


def test_terminal_invariants():
    with pytest.raises(ValueError, match="1 <= p < 2"):
        TerminalSpec.state(lambda x: x, p=2.0)
    with pytest.raises(ValueError, match=">= 1"):
        TerminalSpec.brownian().truncate(0.5, 1)


@given(b=st.lists(finite, min_size=1, max_size=20), n=st.integers(1, 10), k=st.integers(1, 10))
def test_truncation_monotone_in_n(b, n, k):
    ens = _FakeEnsemble(np.abs(np.array(b)))
    t = TerminalSpec.brownian()
    assert np.all(t.truncate(n, 1).sample(ens) <= t.truncate(n + k, 1).sample(ens))


def test_time_grid():
    g = TimeGrid(1.0, 8)
    assert g.times[0] == 0.0 and g.times[-1] == 1.0 and g.dt == 0.125
    assert g.index_of(0.375) == 3
    with pytest.raises(ValueError):
        g.index_of(0.3)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)


def test_bound_certificate_pass_flag():
    assert BoundCertificate("x", 1.0, 0.99, stderr=0.01).passed
    assert not BoundCertificate("x", 1.0, 0.9, stderr=0.01).passed
    assert BoundCertificate("x", None, 3.0).passed
