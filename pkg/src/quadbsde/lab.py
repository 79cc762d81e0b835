"""Statistical experiments with pass/fail certificates.

Each experiment solves one or more BSDEs on a shared path ensemble and
checks an inequality or a convergence statement with a 3-standard-error
allowance.  Tolerances for pathwise comparisons come from a noise floor:
the spread of Y0 over re-solves that fit each regression on a different
random 80% subsample of the paths.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
import numpy as np

from ._stats import LOG_MAX, ExponentialMomentError, log_mean_exp_stderr, mean_stderr, path_mean
from .characteristics import apriori_bound, apriori_exponent, checked_log_mean_exp
from .model import (
    AssumptionParams,
    BoundCertificate,
    DriverSpec,
    Problem,
    TerminalSpec,
    certify_assumptions,
)
from .sde import simulate_brownian
from .solver import (
    RegressionBasis,
    build_truncated_problem,
    cole_hopf_solve,
    layer_regression,
    log_conditional_mean_exp,
    solve_backward_lsmc,
)

DEFAULT_THETAS = (0.5, 0.9, 0.99)
SOLVERS = ("lsmc", "oracle")


class ThetaOverflowError(ExponentialMomentError):
    """The theta certificate left an exponent outside double precision."""

    def __init__(self, theta, message):
        super().__init__(f"theta = {theta}: {message}")
        self.theta = theta


class MomentConditionError(ValueError):
    """Sampled exponential moments of a perturbation sequence diverge."""


def _unpack(problem):
    if isinstance(problem, Problem):
        return problem.driver, problem.terminal
    driver, terminal = problem
    return driver, terminal


def solve(driver, terminal, ensemble, basis=None, cfg=None, solver="lsmc"):
    """Solve with the regression scheme or, for pure-quadratic drivers, the exponential-transform oracle."""
    if solver == "lsmc":
        return solve_backward_lsmc(driver, terminal, ensemble, basis, cfg)
    if solver == "oracle":
        if driver.family != "pure-quadratic" or driver.truncated:
            raise ValueError("the oracle covers untruncated pure-quadratic drivers only")
        return cole_hopf_solve(driver.gamma, driver.params.alpha, terminal.sample(ensemble), ensemble, basis)
    raise ValueError(f"unknown solver {solver!r}; expected one of {SOLVERS}")


def _sample_arguments(driver, budget, seed):
    """Random (t, y, z) with log-uniform magnitudes, as in the assumption certificate."""
    rng = np.random.default_rng(seed)
    scale = lambda size: np.exp(rng.uniform(math.log(1e-2), math.log(10.0), size))
    t = rng.uniform(0.0, driver.T, budget)
    y = rng.standard_normal(budget) * scale(budget)
    z = rng.standard_normal((budget, driver.d)) * scale((budget, 1))
    return t, y, z


def driver_order_violation(driver, driver_prime, budget=1024, seed=0):
    """Largest sampled value of ``f - f'`` clipped at 0; zero means f <= f' on every sample."""
    t, y, z = _sample_arguments(driver, budget, seed)
    gap = driver.evaluate(t, y, z) - driver_prime.evaluate(t, y, z)
    return float(max(0.0, np.max(gap)))


def _order_tol(values):
    return 1e-12 * max(1.0, float(np.max(np.abs(values))) if np.size(values) else 1.0)


# --------------------------------------------------------------------------
# noise floor
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseFloor:
    value: float
    y0: tuple
    seeds: tuple
    fraction: float


def resolve_bases(basis, count, fraction, seed):
    """Bases that fit every regression on a random subsample, one seed each."""
    return [replace(basis, subsample=fraction, seed=seed + k) for k in range(count)]


def noise_floor(driver, terminal, ensemble, basis=None, cfg=None, solver="lsmc",
                n_resolves=5, fraction=0.8, seed=0):
    """Spread (max - min) of Y0 over re-solves with different regression subsamples."""
    basis = basis or RegressionBasis()
    bases = resolve_bases(basis, n_resolves, fraction, seed)
    y0 = tuple(solve(driver, terminal, ensemble, b, cfg, solver).Y0 for b in bases)
    return NoiseFloor(float(max(y0) - min(y0)), y0, tuple(b.seed for b in bases), float(fraction))


# --------------------------------------------------------------------------
# a priori estimate
# --------------------------------------------------------------------------


def check_apriori(solution, params, xi, t=None, basis=None, n_boot=200, seed=0):
    """Check ``|Y_t|`` against the exponential a priori bound.

    At the start time of the ensemble ``|Y0|`` is compared with the
    unconditional bound of :func:`apriori_bound`.  At a later grid node the
    conditional bound ``(1/gamma) log E[exp(a) | F_t]`` is estimated by
    regression on every path and the layer means are compared; the
    certificate also records the fraction of paths where ``|Y_t|`` exceeds
    the pathwise estimate.

    Raises
    ------
    ValueError
        if ``xi`` is not the terminal sample of ``solution`` or t is not a
        grid node at or after the start time.
    """
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != solution.xi.shape or not np.array_equal(xi, solution.xi):
        raise ValueError("ensemble mismatch: terminal samples differ from those of the solution")
    grid = solution.grid
    i0 = solution.start_layer
    i = i0 if t is None else grid.index_of(t)
    if i < i0:
        raise ValueError("t precedes the start time of the solution")
    if i == i0:
        if grid.times[i0] != 0.0:
            raise ValueError("the unconditional bound needs a solution started at t = 0")
        bound = apriori_bound(params, xi, n_boot=n_boot, seed=seed)
        se = math.hypot(bound.stderr, solution.y0_stderr)
        return BoundCertificate("apriori", abs(solution.Y0), bound.bound, se, bound.ci, parameter=0.0, seed=seed,
                                details={"bound_stderr": bound.stderr, "y0_stderr": solution.y0_stderr})
    if i == grid.N:
        return BoundCertificate("apriori", float(np.mean(np.abs(xi))), float(np.mean(np.abs(xi))), 0.0,
                                parameter=float(grid.times[i]), seed=seed, details={"violation_fraction": 0.0})
    basis = basis or RegressionBasis()
    reg = layer_regression(solution.ensemble, basis, i)
    a = apriori_exponent(params, xi, grid.times[i])
    if not np.all(np.isfinite(a)):
        raise ExponentialMomentError("a priori bound: non-finite exponent")
    log_bound = log_conditional_mean_exp(reg, a) / params.gamma
    y = np.abs(solution.Y[i])
    gap = y - log_bound
    se = math.hypot(mean_stderr(gap), solution.y0_stderr)
    return BoundCertificate("apriori", float(y.mean()), float(log_bound.mean()), se, parameter=float(grid.times[i]),
                            seed=seed, details={"violation_fraction": float(np.mean(gap > 3 * se)),
                                                "max_pathwise_excess": float(gap.max())})


# --------------------------------------------------------------------------
# comparison
# --------------------------------------------------------------------------


def _delta_f_integral(solution_prime, driver, driver_prime, first_layer):
    """Left-point integrals of ``(f - f')(t, Y', Z')`` and ``|Y'|`` from a layer to T, plus max of f - f'."""
    grid = solution_prime.grid
    M = solution_prime.M
    dt = grid.dt
    df = np.zeros(M)
    abs_y = np.zeros(M)
    worst = 0.0
    scale = 1.0
    for k in range(first_layer, grid.N):
        y, z = solution_prime.Y[k], solution_prime.Z[k]
        fa = np.broadcast_to(driver.evaluate(grid.times[k], y, z), (M,))
        fb = np.broadcast_to(driver_prime.evaluate(grid.times[k], y, z), (M,))
        delta = fa - fb
        worst = max(worst, float(delta.max()))
        scale = max(scale, float(np.max(np.abs(fa))), float(np.max(np.abs(fb))))
        df += dt * delta
        abs_y += dt * np.abs(y)
    return df, abs_y, worst, scale


def theta_gap_certificate(solution, solution_prime, driver, driver_prime, theta, t=None, basis=None):
    """Certificate for the convexity (theta-difference) bound between two solutions.

    With ``c = gamma e^{beta T + A} / (1 - theta)`` the left side is
    ``c (Y_t - theta Y'_t)`` and the right side is the log of the
    conditional mean of::

        gamma theta / (1 - theta) (dxi + int_t^T df)
            + gamma e^{2 beta T} (|xi| + int_t^T (alpha + 2 beta |Y'|))

    where ``dxi = xi - xi'`` and ``df = (f - f')(s, Y', Z')``.  The
    unobservable exponent A lies in ``[-beta t, beta t]``; both ends are
    evaluated pathwise and the larger left side is used.  Both sides are
    stored as logs of the exponential quantities.

    Raises
    ------
    ValueError
        if theta is outside (0, 1), the solutions use different ensembles,
        or ``dxi <= 0`` and ``df <= 0`` fail on the samples.
    ThetaOverflowError
        if either exponential leaves double precision.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError("theta in (0, 1) violated")
    ens = solution.ensemble
    if ens is None or solution_prime.ensemble is None or ens.key() != solution_prime.ensemble.key():
        raise ValueError("ensemble mismatch: both solutions must share one path ensemble")
    grid = solution.grid
    i0 = max(solution.start_layer, solution_prime.start_layer)
    i = i0 if t is None else grid.index_of(t)
    if i < i0:
        raise ValueError("t precedes the start time of the solutions")
    t_i = float(grid.times[i])
    params = driver.params
    g, b, T = params.gamma, params.beta, params.T
    xi, xi_p = solution.xi, solution_prime.xi
    dxi = xi - xi_p
    if dxi.max() > _order_tol(np.concatenate([xi, xi_p])):
        raise ValueError("precondition xi <= xi' violated on the samples")
    df, abs_y, worst, scale = _delta_f_integral(solution_prime, driver, driver_prime, i)
    if worst > 1e-12 * scale:
        raise ValueError(f"precondition f <= f' violated along the solution: max(f - f') = {worst:.3e}")

    lead = g * theta / (1.0 - theta)
    right = lead * (dxi + df) + g * math.exp(2 * b * T) * (np.abs(xi) + params.alpha.integral(t_i, T) + 2 * b * abs_y)
    gap = solution.Y[i] - theta * solution_prime.Y[i]
    coefs = [g * math.exp(b * T + A) / (1.0 - theta) for A in (-b * t_i, b * t_i)]
    left = np.maximum(coefs[0] * gap, coefs[1] * gap)
    if not np.all(np.isfinite(right)) or not np.all(np.isfinite(left)):
        raise ThetaOverflowError(theta, "non-finite exponent")
    if float(left.max()) > LOG_MAX:
        raise ThetaOverflowError(theta, f"left exponent {float(left.max()):.4g} exceeds {LOG_MAX:.4g}")
    details = {"t": t_i, "delta_term": float(np.mean(lead * (dxi + df)))}
    if i == i0:
        try:
            log_right = checked_log_mean_exp(right, "theta certificate right side")
        except ExponentialMomentError as err:
            raise ThetaOverflowError(theta, str(err)) from None
        stat = path_mean(left)
        se = math.hypot(log_mean_exp_stderr(right),
                        max(coefs) * math.hypot(solution.y0_stderr, theta * solution_prime.y0_stderr))
    else:
        reg = layer_regression(ens, basis or RegressionBasis(), i)
        log_right_path = log_conditional_mean_exp(reg, right)
        if float(log_right_path.max()) > LOG_MAX:
            raise ThetaOverflowError(theta, "right side exceeds double precision")
        stat = float(left.mean())
        log_right = float(log_right_path.mean())
        se = mean_stderr(left - log_right_path)
    return BoundCertificate("theta_gap", float(stat), float(log_right), float(se), parameter=float(theta),
                            details=details)


@dataclass(frozen=True, eq=False)
class ComparisonReport:
    """Outcome of solving two ordered problems on one ensemble.

    ``max_diff`` is the maximum of ``Y - Y'`` over all paths and layers
    from the start time on; ``violation_fraction`` counts the cells where
    that difference exceeds ``tol``.
    """

    max_diff: float
    violation_fraction: float
    tol: float
    noise_floor: float
    y0: float
    y0_prime: float
    thetas: tuple
    certificates: tuple
    overflow: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if not all(0.0 < th < 1.0 for th in self.thetas):
            raise ValueError("theta list inside (0, 1) violated")

    @property
    def passed(self):
        return self.violation_fraction == 0.0 and all(c.passed for c in self.certificates) and not self.overflow


def check_comparison_preconditions(driver, terminal, driver_prime, terminal_prime, ensemble, budget=1024, seed=0):
    """Raise ValueError unless f is convex-certified, f <= f' on samples and xi <= xi' pathwise."""
    cert = certify_assumptions(driver, budget, seed=seed)
    if not cert.passed:
        raise ValueError(f"precondition: assumption certificate of f fails ({cert})")
    if driver_order_violation(driver, driver_prime, budget, seed) > 0.0:
        raise ValueError("precondition f <= f' violated on sampled points")
    xi, xi_p = terminal.sample(ensemble), terminal_prime.sample(ensemble)
    if np.max(xi - xi_p) > _order_tol(np.concatenate([xi, xi_p])):
        raise ValueError("precondition xi <= xi' violated on the paths")
    return xi, xi_p


def run_comparison_experiment(problem, problem_prime, ensemble, basis=None, cfg=None, thetas=DEFAULT_THETAS,
                              tol=None, n_resolves=5, budget=1024, seed=0):
    """Solve two ordered problems on one ensemble and check ``Y <= Y'`` cell by cell.

    ``tol`` defaults to three times the noise floor of the first problem.
    Theta certificates are evaluated at the start time; an overflow is
    recorded in ``overflow`` and fails the report.
    """
    driver, terminal = _unpack(problem)
    driver_p, terminal_p = _unpack(problem_prime)
    check_comparison_preconditions(driver, terminal, driver_p, terminal_p, ensemble, budget, seed)
    basis = basis or RegressionBasis()
    sol = solve_backward_lsmc(driver, terminal, ensemble, basis, cfg)
    sol_p = solve_backward_lsmc(driver_p, terminal_p, ensemble, basis, cfg)
    floor = noise_floor(driver, terminal, ensemble, basis, cfg, n_resolves=n_resolves, seed=seed).value
    if tol is None:
        tol = 3.0 * floor
    i0 = sol.start_layer
    diff = sol.Y[i0:] - sol_p.Y[i0:]
    certs, overflow = [], {}
    for th in thetas:
        try:
            certs.append(theta_gap_certificate(sol, sol_p, driver, driver_p, th, basis=basis))
        except ThetaOverflowError as err:
            overflow[th] = str(err)
    return ComparisonReport(float(diff.max()), float(np.mean(diff > tol)), float(tol), floor, sol.Y0, sol_p.Y0,
                            tuple(thetas), tuple(certs), overflow, seed)


@dataclass(frozen=True)
class StrictComparison:
    y0_gap: float
    equal_within_floor: bool
    zero_mass: float

    @property
    def consistent(self):
        """Equal starting values require data that agree on a set of positive mass."""
        return not self.equal_within_floor or self.zero_mass > 0.0


def strict_comparison_check(solution, solution_prime, driver, driver_prime, floor, tol=1e-12):
    """Mass of paths where ``xi = xi'`` and ``int (f - f')(Y', Z') = 0``, reported with the Y0 gap."""
    df, _, _, _ = _delta_f_integral(solution_prime, driver, driver_prime, solution_prime.start_layer)
    dxi = solution.xi - solution_prime.xi
    mass = float(np.mean((np.abs(dxi) <= tol) & (np.abs(df) <= tol)))
    gap = abs(solution.Y0 - solution_prime.Y0)
    return StrictComparison(float(gap), bool(gap <= floor), mass)


# --------------------------------------------------------------------------
# stability
# --------------------------------------------------------------------------


def clamp_sequence(driver, terminal):
    """n -> (f, clamp(xi, -n, n))."""
    return lambda n: (driver, replace(terminal, trunc_pos=float(n), trunc_neg=float(n)))


def alpha_shift_sequence(driver, terminal, size=1.0):
    """n -> (f + size / n, xi) through a shifted rate process."""
    def build(n):
        params = driver.params
        return driver.with_params(params.with_alpha(params.alpha.plus(size / n))), terminal
    return build


def constant_sequence(driver, terminal):
    return lambda n: (driver, terminal)


def _distance(sol, other, ps):
    """Per p: mean of expm1(p sup|Y - Y'|) and mean of (int |Z - Z'|^2)^{p/2}."""
    i0 = max(sol.start_layer, other.start_layer)
    sup = np.max(np.abs(sol.Y[i0:] - other.Y[i0:]), axis=0)
    dz = sol.Z[i0:] - other.Z[i0:]
    qv = sol.grid.dt * np.sum(dz * dz, axis=(0, 2))
    e = {p: float(np.mean(np.expm1(p * sup))) for p in ps}
    z = {p: float(np.mean(qv ** (p / 2.0))) for p in ps}
    return e, z


@dataclass(frozen=True, eq=False)
class StabilityReport:
    """Errors of perturbed solutions against the target, per n and per p.

    ``e[p][k] = mean(exp(p sup_t |Y^n - Y|)) - 1`` and
    ``z[p][k] = mean((int |Z^n - Z|^2 dt)^{p/2})`` for ``n = ns[k]``.
    The floors are the largest values of the same statistics between the
    target and its re-solves with subsampled regressions.
    """

    ns: tuple
    ps: tuple
    e: dict
    z: dict
    e_floor: dict
    z_floor: dict
    log_moments: dict
    seed: int = 0

    def __post_init__(self):
        for table in (self.e, self.z):
            for vals in table.values():
                if any(v < 0 for v in vals):
                    raise ValueError("error statistics >= 0 violated")

    @staticmethod
    def _strict(vals):
        return all(b < a for a, b in zip(vals, vals[1:]))

    def strictly_decreasing(self, p):
        return self._strict(self.e[p]) and self._strict(self.z[p])

    def reaches_floor(self, p, factor=2.0):
        return self.e[p][-1] <= factor * self.e_floor[p] and self.z[p][-1] <= factor * self.z_floor[p]

    def decreases_to_floor(self, p, factor=2.0):
        """Each step strictly decreases unless both values already sit within ``factor`` of the floor."""
        ok = True
        for vals, floor in ((self.e[p], self.e_floor[p]), (self.z[p], self.z_floor[p])):
            ok &= all(b < a or max(a, b) <= factor * floor for a, b in zip(vals, vals[1:]))
        return ok and self.reaches_floor(p, factor)

    @property
    def passed(self):
        return all(self.decreases_to_floor(p) for p in self.ps)


def _check_moment_condition(target, perturbed, ns, lams):
    """Sampled proxy of a uniform exponential-moment bound along the sequence.

    For each lambda the log of ``mean(exp(lambda (|xi_n| + |alpha_n|_1)))``
    must be finite; a sequence whose moments increase at every n and end
    more than a factor 2 above the target's is reported as divergent.
    """
    out = {}
    for lam in lams:
        try:
            base = checked_log_mean_exp(lam * target, f"moment of the target at lambda={lam}")
            seq = [checked_log_mean_exp(lam * v, f"moment at n={n}, lambda={lam}") for n, v in zip(ns, perturbed)]
        except ExponentialMomentError as err:
            raise MomentConditionError(f"exponential-moment condition fails: {err}") from None
        if len(seq) > 1 and all(b > a for a, b in zip(seq, seq[1:])) and seq[-1] > base + math.log(2.0):
            raise MomentConditionError(f"exponential moments at lambda={lam} grow along the sequence: {seq}")
        out[lam] = (base, tuple(seq))
    return out


def run_stability_experiment(problem, builder, ns, ensemble, ps=(1.0, 2.0), basis=None, cfg=None, solver="lsmc",
                             lams=(1.0, 2.0), n_resolves=5, fraction=0.8, budget=512, seed=0):
    """Solve a target and a perturbation sequence on one ensemble and measure the errors.

    ``builder(n)`` returns ``(f_n, xi_n)``.  Every ``f_n`` must share beta
    and gamma with the target driver and pass its assumption certificate.

    Raises
    ------
    ValueError
        if a perturbed driver changes (beta, gamma) or fails certification.
    MomentConditionError
        if the sampled exponential moments of ``|xi_n| + |alpha_n|_1`` diverge.
    """
    driver, terminal = _unpack(problem)
    basis = basis or RegressionBasis()
    ns = tuple(ns)
    ps = tuple(float(p) for p in ps)
    seq = [builder(n) for n in ns]
    for n, (f_n, _) in zip(ns, seq):
        if (f_n.beta, f_n.gamma) != (driver.beta, driver.gamma):
            raise ValueError(f"perturbed driver at n={n} changes (beta, gamma)")
        cert = certify_assumptions(f_n, budget, seed=seed)
        if not cert.passed:
            raise ValueError(f"perturbed driver at n={n} fails its assumption certificate")
    xi = terminal.sample(ensemble)
    zeta = np.abs(xi) + driver.params.alpha.l1
    zetas = [np.abs(t_n.sample(ensemble)) + f_n.params.alpha.l1 for f_n, t_n in seq]
    moments = _check_moment_condition(zeta, zetas, ns, lams)

    target = solve(driver, terminal, ensemble, basis, cfg, solver)
    e = {p: [] for p in ps}
    z = {p: [] for p in ps}
    for f_n, t_n in seq:
        en, zn = _distance(solve(f_n, t_n, ensemble, basis, cfg, solver), target, ps)
        for p in ps:
            e[p].append(en[p])
            z[p].append(zn[p])
    e_floor = {p: 0.0 for p in ps}
    z_floor = {p: 0.0 for p in ps}
    for b in resolve_bases(basis, n_resolves, fraction, seed):
        en, zn = _distance(solve(driver, terminal, ensemble, b, cfg, solver), target, ps)
        for p in ps:
            e_floor[p] = max(e_floor[p], en[p])
            z_floor[p] = max(z_floor[p], zn[p])
    return StabilityReport(ns, ps, {p: tuple(v) for p, v in e.items()}, {p: tuple(v) for p, v in z.items()},
                           e_floor, z_floor, moments, seed)


def loglog_slope(ns, values):
    """Least-squares slope of log(values) against log(ns)."""
    x = np.log(np.asarray(ns, dtype=np.float64))
    y = np.log(np.asarray(values, dtype=np.float64))
    return float(np.polyfit(x, y, 1)[0])


# --------------------------------------------------------------------------
# monotone approximation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MonotoneReport:
    """Y0 of the truncated problems; the last entry of ``ns`` is the untruncated problem (inf)."""

    ns: tuple
    y0: tuple
    tol: float
    nondecreasing: bool
    gaps: tuple
    gaps_shrinking: bool
    converged: bool

    @property
    def passed(self):
        return self.nondecreasing and self.gaps_shrinking and self.converged


def run_monotone_approximation(problem, ns, ensemble, basis=None, cfg=None, solver="lsmc", tol=None,
                               n_resolves=5, budget=1024, seed=0):
    """Solve truncations ``(xi^+ ^ n, f 1{t <= sigma_n})`` for increasing n.

    Requires ``xi >= 0`` on the paths and ``f >= 0`` on sampled points.
    ``tol`` defaults to the noise floor of the untruncated problem.  The
    report checks that Y0(n) never decreases by more than tol, that the
    distance to the untruncated Y0 never grows by more than tol, and that
    the largest finite n is within tol of the untruncated value.
    """
    driver, terminal = _unpack(problem)
    xi = terminal.sample(ensemble)
    if xi.min() < 0.0:
        raise ValueError("precondition xi >= 0 violated on the paths")
    t, y, z = _sample_arguments(driver, budget, seed)
    if np.min(driver.evaluate(t, y, z)) < 0.0:
        raise ValueError("precondition f >= 0 violated on sampled points")
    finite = sorted(float(n) for n in ns if n is not None and math.isfinite(n))
    if any(b == a for a, b in zip(finite, finite[1:])):
        raise ValueError("truncation levels must be distinct")
    basis = basis or RegressionBasis()
    levels = finite + [math.inf]
    y0 = []
    for n in levels:
        f_n, xi_n = build_truncated_problem(driver, terminal, n, n)
        y0.append(solve(f_n, xi_n, ensemble, basis, cfg, solver).Y0)
    if tol is None:
        tol = noise_floor(driver, terminal, ensemble, basis, cfg, solver, n_resolves, seed=seed).value
    tol = float(tol) + 1e-12 * max(1.0, abs(y0[-1]))
    gaps = [abs(v - y0[-1]) for v in y0[:-1]]
    nondecreasing = all(b >= a - tol for a, b in zip(y0, y0[1:]))
    shrinking = all(b <= a + tol for a, b in zip(gaps, gaps[1:]))
    converged = not gaps or gaps[-1] <= tol
    return MonotoneReport(tuple(levels), tuple(y0), tol, nondecreasing, tuple(gaps), shrinking, converged)


# --------------------------------------------------------------------------
# moment estimate
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentRatio:
    """``E[exp(gamma p sup|Y|) + (int |Z|^2)^{p/2}] / E[exp(p gamma (|xi| + |alpha|_1))]`` in logs."""

    p: float
    log_statistic: float
    log_bound: float

    @property
    def log_ratio(self):
        return self.log_statistic - self.log_bound

    @property
    def ratio(self):
        return math.exp(self.log_ratio) if self.log_ratio < LOG_MAX else math.inf


def moment_ratio(solution, params, p=2.0):
    """Sample ratio of the moment statistic of (Y, Z) to the exponential moment of the data."""
    if not p > 1.0:
        raise ValueError("moment order p > 1 violated")
    g = params.gamma
    i0 = solution.start_layer
    sup = np.max(np.abs(solution.Y[i0:]), axis=0)
    qv = solution.grid.dt * np.sum(solution.Z[i0:] ** 2, axis=(0, 2))
    log_y = checked_log_mean_exp(g * p * sup, "moment statistic of Y")
    with np.errstate(divide="ignore"):
        log_z = float(np.log(np.mean(qv ** (p / 2.0))))
    log_stat = float(np.logaddexp(log_y, log_z))
    log_bound = checked_log_mean_exp(p * g * (np.abs(solution.xi) + params.alpha.l1), "moment of the data")
    return MomentRatio(float(p), log_stat, log_bound)


def moment_stability_certificate(problem, grid, M, seeds=(0, 1, 2, 3, 4), p=2.0, basis=None, cfg=None,
                                 solver="lsmc"):
    """Spread (max / min) of the moment ratio over independent ensembles; passes when below 2."""
    driver, terminal = _unpack(problem)
    ratios = []
    for s in seeds:
        ens = simulate_brownian(grid, M, driver.d, seed=s)
        ratios.append(moment_ratio(solve(driver, terminal, ens, basis, cfg, solver), driver.params, p).ratio)
    finite = all(math.isfinite(r) and r > 0 for r in ratios)
    spread = max(ratios) / min(ratios) if finite else math.inf
    return BoundCertificate("moment_ratio_spread", float(spread), 2.0, 0.0, parameter=float(p), seed=int(seeds[0]),
                            details={"ratios": [float(r) for r in ratios], "seeds": list(seeds)})


# --------------------------------------------------------------------------
# problem catalogues
# --------------------------------------------------------------------------


def builtin_problems(T=1.0):
    """Named problems used by the moment check and the command line runner."""
    unit = AssumptionParams.simple(gamma=1.0, T=T)
    lq = AssumptionParams.simple(gamma=0.5, beta=0.5, alpha=0.2, T=T)
    return {
        "quadratic-brownian": Problem(DriverSpec.quadratic(unit), TerminalSpec.brownian(), "quadratic-brownian"),
        "quadratic-abs": Problem(DriverSpec.quadratic(unit), TerminalSpec.brownian("abs"), "quadratic-abs"),
        "linear-quadratic": Problem(DriverSpec.linear_quadratic(lq), TerminalSpec.brownian(), "linear-quadratic"),
        "quadratic-scaled": Problem(DriverSpec.quadratic(AssumptionParams.simple(gamma=2.0, T=T)),
                                    TerminalSpec.brownian(scale=0.5), "quadratic-scaled"),
    }


def random_certified_problems(count, seed=0, T=1.0, budget=1024):
    """Random drivers from the convex quadratic families with Brownian terminal values, all certified."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        gamma = float(rng.uniform(0.3, 2.0))
        beta = float(rng.uniform(0.0, 1.0))
        alpha = float(rng.uniform(0.0, 1.0))
        params = AssumptionParams.simple(gamma=gamma, beta=beta, alpha=alpha, T=T)
        family = ("pure-quadratic", "linear-plus-quadratic", "linear-in-y")[int(rng.integers(3))]
        y_coef = None if family == "pure-quadratic" else float(rng.uniform(-beta, beta))
        driver = DriverSpec(family, params, y_coef=y_coef)
        terminal = TerminalSpec.brownian(("identity", "abs")[int(rng.integers(2))],
                                         scale=float(rng.uniform(0.2, 1.5)), shift=float(rng.uniform(-1.0, 1.0)))
        if certify_assumptions(driver, budget, seed=len(out)).passed:
            out.append(Problem(driver, terminal, f"random-{len(out)}"))
    return out


def random_ordered_pairs(count, seed=0, T=1.0):
    """Pairs with ``gamma <= gamma'``, ``alpha <= alpha'`` and ``xi' = xi + |c|``."""
    rng = np.random.default_rng(seed)
    pairs = []
    for k in range(count):
        gamma = float(rng.uniform(0.3, 1.5))
        gamma_p = gamma + float(rng.uniform(0.0, 1.0))
        alpha = float(rng.uniform(0.0, 0.5))
        alpha_p = alpha + float(rng.uniform(0.0, 0.5))
        beta = float(rng.uniform(0.0, 0.5))
        k_y = float(rng.uniform(-beta, beta))
        scale = float(rng.uniform(0.2, 1.2))
        shift = abs(float(rng.normal(0.0, 0.5)))
        func = ("identity", "abs")[int(rng.integers(2))]
        family = ("pure-quadratic", "linear-plus-quadratic")[int(rng.integers(2))]
        y_coef = None if family == "pure-quadratic" else k_y
        f = DriverSpec(family, AssumptionParams.simple(gamma=gamma, beta=beta, alpha=alpha, T=T), y_coef=y_coef)
        f_p = DriverSpec(family, AssumptionParams.simple(gamma=gamma_p, beta=beta, alpha=alpha_p, T=T), y_coef=y_coef)
        xi = TerminalSpec.brownian(func, scale=scale)
        xi_p = TerminalSpec.brownian(func, scale=scale, shift=shift)
        pairs.append((Problem(f, xi, f"pair-{k}"), Problem(f_p, xi_p, f"pair-{k}-prime")))
    return pairs
