"""Finite differences for 1-D semilinear PDEs with quadratic gradient terms, and
their Monte Carlo cross-check through the BSDE representation."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import kernels
from ._stats import bootstrap
from .model import TimeGrid
from .sde import SdeCoefficients, simulate_brownian, simulate_sde
from .solver import PicardConfig, RegressionBasis, solve_backward_lsmc


class MeshConditionError(ValueError):
    pass


class FdBlowUp(ArithmeticError):
    """Non-finite values after a time step; ``layer`` is the offending time index."""

    def __init__(self, layer, reason="non-finite value"):
        super().__init__(f"finite-difference blow-up at layer {layer}: {reason}")
        self.layer = layer


def _as_array(v, shape):
    return np.broadcast_to(np.asarray(v, dtype=np.float64), shape)


@dataclass(frozen=True, eq=False)
class PdeProblem:
    """u_t + b u_x + sigma^2/2 u_xx + f(t, x, u, sigma u_x) = 0 with u(T) = g.

    Coefficients act elementwise on 1-D arrays: ``drift(t, x)``,
    ``vol(t, x)``, ``nonlinearity(t, x, u, w)`` and ``terminal(x)``.
    ``beta`` and ``sigma_bound`` are the declared Lipschitz/growth constant
    and sup of ``|vol|``; ``p`` is the growth exponent of f and g in x.
    ``exact`` is an optional closed form u(t, x).
    """

    drift: Callable
    vol: Callable
    nonlinearity: Callable
    terminal: Callable
    beta: float
    sigma_bound: float
    p: float = 1.0
    T: float = 1.0
    label: str = ""
    exact: Optional[Callable] = None
    depends_on_u: bool = False

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T > 0 violated")
        if not self.sigma_bound > 0:
            raise ValueError("sigma bound > 0 violated")
        if self.beta < 0:
            raise ValueError("beta >= 0 violated")
        if self.p < 1:
            raise ValueError("growth exponent p >= 1 violated")

    def b(self, t, x):
        return _as_array(self.drift(t, x), np.shape(x))

    def sigma(self, t, x):
        return _as_array(self.vol(t, x), np.shape(x))

    def f(self, t, x, u, w):
        return _as_array(self.nonlinearity(t, x, u, w), np.broadcast_shapes(np.shape(x), np.shape(u), np.shape(w)))

    def g(self, x):
        return _as_array(self.terminal(x), np.shape(x))

    def coefficients(self):
        return SdeCoefficients.scalar(self.drift, self.vol, self.beta, self.sigma_bound)

    @classmethod
    def quadratic_gradient(cls, gamma=1.0, T=1.0):
        """f = gamma/2 w^2, g = x; u = x + gamma (T - t) / 2."""
        return cls(_zero_drift, _unit_vol, _quadratic_nonlinearity(gamma), _identity,
                   beta=max(1.0, gamma / 2.0), sigma_bound=1.0, p=1.0, T=T, label=f"quadratic-gradient(gamma={gamma})",
                   exact=lambda t, x: np.asarray(x, dtype=np.float64) + gamma * (T - np.asarray(t)) / 2.0)

    @classmethod
    def heat_square(cls, T=1.0):
        """f = 0, g = x^2; u = x^2 + T - t.  Quadratic growth lies outside the certified class."""
        return cls(_zero_drift, _unit_vol, _zero_nonlinearity, np.square, beta=1.0, sigma_bound=1.0, p=2.0, T=T,
                   label="heat-square", exact=lambda t, x: np.square(x) + (T - np.asarray(t)))

    @classmethod
    def heat_sine(cls, T=1.0):
        """f = 0, g = sin x; u = exp(-(T - t)/2) sin x."""
        return cls(_zero_drift, _unit_vol, _zero_nonlinearity, np.sin, beta=1.0, sigma_bound=1.0, p=1.0, T=T,
                   label="heat-sine", exact=lambda t, x: np.exp(-(T - np.asarray(t)) / 2.0) * np.sin(x))

    @classmethod
    def cole_hopf_cos(cls, gamma=1.0, level=2.0, T=1.0):
        """f = gamma/2 w^2, g = log(level + cos x) / gamma with level > 1.

        exp(gamma u) solves the heat equation, so
        u = log(level + exp(-(T - t)/2) cos x) / gamma.
        """
        if not level > 1:
            raise ValueError("level > 1 violated")

        def g(x):
            return np.log(level + np.cos(x)) / gamma

        def exact(t, x):
            return np.log(level + np.exp(-(T - np.asarray(t)) / 2.0) * np.cos(x)) / gamma

        # |g| <= log(level + 1) / gamma
        beta = max(gamma / 2.0, math.log(level + 1.0) / gamma, 1e-12)
        return cls(_zero_drift, _unit_vol, _quadratic_nonlinearity(gamma), g, beta=beta, sigma_bound=1.0, p=1.0,
                   T=T, label=f"cole-hopf-cos(gamma={gamma}, level={level})", exact=exact)


def _zero_drift(t, x):
    return np.zeros_like(np.asarray(x, dtype=np.float64))


def _unit_vol(t, x):
    return np.ones_like(np.asarray(x, dtype=np.float64))


def _identity(x):
    return np.asarray(x, dtype=np.float64)


def _zero_nonlinearity(t, x, u, w):
    return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(u), np.shape(w)))


def _quadratic_nonlinearity(gamma):
    def f(t, x, u, w):
        return 0.5 * gamma * np.square(w) + 0.0 * np.asarray(u)

    return f


# --------------------------------------------------------------------------
# sampled certification
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PdeCertificate:
    """Worst sampled violations of the coefficient and growth hypotheses."""

    drift_at_origin: float
    lipschitz_violation: float
    sigma_violation: float
    u_lipschitz_violation: float
    convexity_violation: float
    growth_violation: float
    p: float
    tol: float
    budget: int
    seed: int

    @property
    def passed(self):
        return (self.p < 2.0 and self.drift_at_origin <= self.tol and self.lipschitz_violation <= self.tol
                and self.sigma_violation <= self.tol and self.u_lipschitz_violation <= self.tol
                and self.convexity_violation <= self.tol and self.growth_violation <= self.tol)

    def failures(self):
        names = []
        if self.p >= 2.0:
            names.append("growth exponent p < 2")
        for name in ("drift_at_origin", "lipschitz_violation", "sigma_violation", "u_lipschitz_violation",
                     "convexity_violation", "growth_violation"):
            if getattr(self, name) > self.tol:
                names.append(name)
        return names


def certify_pde_problem(problem, budget=4096, x_scale=10.0, tol=1e-9, seed=0):
    """Check the hypotheses on ``budget`` random (t, x, u, w) samples.

    Violations are relative excesses over the declared constants; a
    certificate passes when all are at most ``tol`` and p < 2.
    """
    rng = np.random.default_rng(seed)
    n = int(budget)
    t = rng.uniform(0.0, problem.T, n)
    x = rng.uniform(-x_scale, x_scale, n)
    x2 = rng.uniform(-x_scale, x_scale, n)
    u = rng.normal(0.0, x_scale, n)
    u2 = rng.normal(0.0, x_scale, n)
    w1 = rng.normal(0.0, 3.0, n)
    w2 = rng.normal(0.0, 3.0, n)
    beta = problem.beta
    scale = 1.0 + beta

    b0 = float(np.max(np.abs(problem.b(t, np.zeros(n)))))
    drift0 = max(0.0, b0 - beta) / scale
    dx = np.abs(x - x2)
    coef = np.abs(problem.b(t, x) - problem.b(t, x2)) + np.abs(problem.sigma(t, x) - problem.sigma(t, x2))
    lip = float(np.max(np.maximum(0.0, coef - beta * dx) / (scale * (1.0 + dx))))
    sig = float(np.max(np.abs(problem.sigma(t, x))))
    sig_v = max(0.0, sig - problem.sigma_bound) / (1.0 + problem.sigma_bound)

    fu = np.abs(problem.f(t, x, u, w1) - problem.f(t, x, u2, w1))
    du = np.abs(u - u2)
    u_lip = float(np.max(np.maximum(0.0, fu - beta * du) / (scale * (1.0 + du))))

    f1 = problem.f(t, x, u, w1)
    f2 = problem.f(t, x, u, w2)
    mid = problem.f(t, x, u, 0.5 * (w1 + w2))
    conv = float(np.max(np.maximum(0.0, mid - 0.5 * (f1 + f2)) / (1.0 + np.abs(f1) + np.abs(f2))))

    bound = beta * (1.0 + np.abs(x) ** problem.p + np.abs(u) + w1 * w1)
    lhs = np.abs(f1) + np.abs(problem.g(x))
    growth = float(np.max(np.maximum(0.0, lhs - bound) / (1.0 + bound)))
    return PdeCertificate(drift0, lip, sig_v, u_lip, conv, growth, float(problem.p), tol, n, seed)


# --------------------------------------------------------------------------
# finite differences
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PdeGrid:
    """Uniform space-time mesh on [x_lo, x_hi] x [0, T] with J nodes and N steps."""

    x_lo: float
    x_hi: float
    J: int
    N: int
    T: float = 1.0

    def __post_init__(self):
        if self.J < 3:
            raise ValueError("J >= 3 violated")
        if self.N < 1:
            raise ValueError("N >= 1 violated")
        if not self.x_hi > self.x_lo:
            raise ValueError("x_lo < x_hi violated")
        if not self.T > 0:
            raise ValueError("T > 0 violated")

    @classmethod
    def around(cls, points, sigma_bound, T, J, N, margin_sd=4.0):
        """Smallest interval holding every point with margin ``margin_sd * sigma * sqrt(T)``."""
        xs = [x for _, x in points]
        m = margin_sd * sigma_bound * math.sqrt(T)
        return cls(min(xs) - m, max(xs) + m, J, N, T)

    @property
    def dx(self):
        return (self.x_hi - self.x_lo) / (self.J - 1)

    @property
    def dt(self):
        return self.T / self.N

    @property
    def x(self):
        return np.linspace(self.x_lo, self.x_hi, self.J)

    @property
    def times(self):
        return np.linspace(0.0, self.T, self.N + 1)

    def mesh_ratio(self, sigma_bound):
        """dt sigma^2 / dx^2."""
        return self.dt * sigma_bound**2 / self.dx**2

    def margin(self, points, sigma_bound):
        """Smallest distance from a point to the boundary, in units of sigma sqrt(T)."""
        d = min(min(x - self.x_lo, self.x_hi - x) for _, x in points)
        return d / (sigma_bound * math.sqrt(self.T))

    def refined(self):
        """Half the space step and a quarter of the time step."""
        return replace(self, J=2 * self.J - 1, N=4 * self.N)

    def coarsened(self):
        if self.J % 2 == 0 or self.N % 4:
            raise ValueError("coarsening needs odd J and N divisible by 4")
        return replace(self, J=(self.J + 1) // 2, N=self.N // 4)


@dataclass(frozen=True, eq=False)
class PdeSolution:
    """u on the mesh: ``u[n, j]`` approximates u(t_n, x_j)."""

    grid: PdeGrid
    u: np.ndarray
    metadata: dict = field(default_factory=dict)

    def layer(self, t, tol=1e-9):
        n = t / self.grid.dt
        k = int(round(n))
        if abs(n - k) > tol * max(1.0, n) or not 0 <= k <= self.grid.N:
            raise ValueError(f"t = {t} is not a time layer of the mesh")
        return k

    def at(self, t, x):
        """Linear interpolation in x, and in t between the two enclosing layers."""
        if not 0.0 <= t <= self.grid.T:
            raise ValueError(f"t = {t} outside [0, {self.grid.T}]")
        s = t / self.grid.dt
        k = min(int(math.floor(s + 1e-9)), self.grid.N - 1)
        w = min(max(s - k, 0.0), 1.0)
        lo = np.interp(x, self.grid.x, self.u[k])
        if w <= 1e-9:
            return lo
        return (1.0 - w) * lo + w * np.interp(x, self.grid.x, self.u[k + 1])

    def interior(self, margin):
        """Mask of nodes at distance >= margin from both ends."""
        x = self.grid.x
        return (x - self.grid.x_lo >= margin - 1e-12) & (self.grid.x_hi - x >= margin - 1e-12)

    def sup_error(self, exact, margin=0.0):
        """Max over layers and nodes ``margin`` away from the ends of |u - exact|."""
        mask = self.interior(margin)
        t = self.grid.times[:, None]
        return float(np.max(np.abs(self.u[:, mask] - exact(t, self.grid.x[mask][None, :]))))


def fd_solve(problem, grid, mesh_c=0.5, grad_clip=1e3):
    """Backward semi-implicit finite differences.

    Diffusion is implicit (one tridiagonal solve per step).  Drift and
    nonlinearity are explicit on the known layer with a central gradient
    clipped at ``grad_clip``.  Boundary nodes follow from linear
    extrapolation of the two nearest interior nodes.

    ``metadata["peclet"]`` is the largest interior cell Peclet number
    ``dx |b + sigma df/dw| / sigma^2`` met during the sweep and
    ``metadata["edge_speed"]`` the largest transport speed at the end
    nodes.  With Peclet <= 1 the implicit diffusion dominates the central
    gradient term, and with zero edge speed the end nodes do not feed the
    non-monotone extrapolation; see :func:`monotone_regime`.

    Raises
    ------
    MeshConditionError
        if ``dt > mesh_c dx^2 / sigma_bound^2``.
    FdBlowUp
        on a singular tridiagonal system or a non-finite layer.
    """
    if abs(grid.T - problem.T) > 1e-12 * problem.T:
        raise ValueError(f"grid horizon {grid.T} differs from problem horizon {problem.T}")
    dx, dt = grid.dx, grid.dt
    limit = mesh_c * dx * dx / problem.sigma_bound**2
    if dt > limit * (1.0 + 1e-12):
        raise MeshConditionError(f"mesh condition dt <= c dx^2 / sigma^2 violated: dt = {dt:.6g} > {limit:.6g}")
    J, N = grid.J, grid.N
    x = grid.x
    times = grid.times
    u = np.empty((N + 1, J))
    u[N] = problem.g(x)
    if not np.all(np.isfinite(u[N])):
        raise FdBlowUp(N, "terminal data not finite")
    clipped = 0
    peclet = edge_speed = 0.0
    grad = np.empty(J)
    for n in range(N - 1, -1, -1):
        nxt = u[n + 1]
        t = times[n + 1]
        grad[1:-1] = nxt[2:] - nxt[:-2]
        grad[0] = -3.0 * nxt[0] + 4.0 * nxt[1] - nxt[2]
        grad[-1] = 3.0 * nxt[-1] - 4.0 * nxt[-2] + nxt[-3]
        g = grad / (2.0 * dx)
        over = np.abs(g) > grad_clip
        if np.any(over):
            clipped += int(over.sum())
            g = np.clip(g, -grad_clip, grad_clip)
        sig = problem.sigma(t, x)
        w = sig * g
        drift = problem.b(t, x)
        rhs = nxt + dt * (drift * g + problem.f(t, x, nxt, w))
        # transport speed b + sigma df/dw of the linearized explicit term
        h = 1e-6 * (1.0 + np.abs(w))
        speed = np.abs(drift + sig * (problem.f(t, x, nxt, w + h) - problem.f(t, x, nxt, w - h)) / (2.0 * h))
        peclet = max(peclet, float(np.max(speed[1:-1] * dx / sig[1:-1] ** 2)))
        edge_speed = max(edge_speed, float(speed[0]), float(speed[-1]))
        a = 0.5 * dt * problem.sigma(times[n], x) ** 2 / (dx * dx)
        # boundary rows: second derivative zero, i.e. linear extrapolation of u
        a[0] = a[-1] = 0.0
        try:
            u[n] = kernels.tridiag_solve(-a, 1.0 + 2.0 * a, -a, rhs)
        except ZeroDivisionError as exc:
            raise FdBlowUp(n, "singular tridiagonal system") from exc
        if not np.all(np.isfinite(u[n])):
            raise FdBlowUp(n)
    meta = {"scheme": "semi-implicit central", "mesh_ratio": grid.mesh_ratio(problem.sigma_bound),
            "mesh_c": mesh_c, "grad_clip": grad_clip, "grad_clip_events": clipped,
            "peclet": peclet, "edge_speed": edge_speed}
    return PdeSolution(grid, u, meta)


def monotone_regime(solution, edge_tol=1e-9):
    """True when the sweep stayed where the scheme is order-preserving in the data."""
    meta = solution.metadata
    return meta["peclet"] <= 1.0 and meta["edge_speed"] <= edge_tol and meta["grad_clip_events"] == 0


# --------------------------------------------------------------------------
# Feynman--Kac Monte Carlo
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _StateDriver:
    """Adapter presenting f(t, x, u, w) to the BSDE solver as a driver in (t, y, z, x)."""

    problem: PdeProblem
    d: int = 1

    @property
    def depends_on_y(self):
        return self.problem.depends_on_u

    def evaluate(self, t, y, z, x=None):
        return self.problem.f(t, x[:, 0], y, z[:, 0])


@dataclass(frozen=True)
class FkConfig:
    """Monte Carlo settings for one Feynman--Kac value."""

    N: int = 100
    M: int = 100_000
    seed: int = 0
    basis: RegressionBasis = RegressionBasis(kind="state")
    picard: PicardConfig = PicardConfig()
    n_boot: int = 200
    require_certificate: bool = True

    def __post_init__(self):
        if self.N < 1 or self.M < 2:
            raise ValueError("N >= 1 and M >= 2 required")
        if self.basis.kind != "state":
            raise ValueError("Feynman--Kac values need a state basis")


@dataclass(frozen=True, eq=False)
class FkEstimate:
    t0: float
    x0: float
    value: float
    stderr: float
    ci: tuple
    solution: object = None


def feynman_kac_u(t0, x0, problem, cfg=None):
    """Monte Carlo value of u(t0, x0) = Y_{t0} for the forward process started at (t0, x0).

    Raises
    ------
    ValueError
        if the growth certificate fails and ``cfg.require_certificate`` is
        set, or t0 is not a layer of the time grid.
    """
    cfg = cfg or FkConfig()
    if cfg.require_certificate:
        cert = certify_pde_problem(problem)
        if not cert.passed:
            raise ValueError(f"growth certificate failed for {problem.label or 'problem'}: {cert.failures()}")
    if not 0.0 <= t0 <= problem.T:
        raise ValueError(f"t0 = {t0} outside [0, {problem.T}]")
    if t0 == problem.T:
        v = float(problem.g(np.array([x0]))[0])
        return FkEstimate(t0, x0, v, 0.0, (v, v))
    grid = TimeGrid(problem.T, cfg.N)
    ens = simulate_sde(problem.coefficients(), t0, [x0], simulate_brownian(grid, cfg.M, 1, seed=cfg.seed))
    xi = problem.g(ens.states[:, -1, 0])
    sol = solve_backward_lsmc(_StateDriver(problem), None, ens, cfg.basis, cfg.picard, xi=xi)
    se, ci = bootstrap(np.mean, sol.eta, n_boot=cfg.n_boot, seed=cfg.seed)
    return FkEstimate(t0, x0, sol.Y0, se, ci, sol)


def markov_residual(estimate, u):
    """Mean over paths and layers of |Y_i - u(t_i, X_i)| for a callable or mesh solution u."""
    sol = estimate.solution
    if sol is None:
        return 0.0
    ens = sol.ensemble
    times = ens.grid.times
    res = []
    for i in range(sol.start_layer, ens.grid.N + 1):
        x = ens.states[:, i, 0]
        ref = u.at(times[i], x) if isinstance(u, PdeSolution) else u(times[i], x)
        res.append(np.abs(sol.Y[i] - ref))
    return float(np.mean(res))


# --------------------------------------------------------------------------
# cross-validation
# --------------------------------------------------------------------------


def standard_points(T):
    """{0, T/2} x {-1, 0, 1} together with (0, -2) and (0, 2)."""
    pts = [(t, x) for t in (0.0, T / 2.0) for x in (-1.0, 0.0, 1.0)]
    return pts + [(0.0, -2.0), (0.0, 2.0)]


@dataclass(frozen=True)
class PointComparison:
    t: float
    x: float
    u_fd: float
    u_mc: float
    ci: tuple
    mc_stderr: float
    fd_error: float
    budget: float

    @property
    def discrepancy(self):
        return abs(self.u_fd - self.u_mc)

    @property
    def passed(self):
        return self.discrepancy <= self.budget


@dataclass(frozen=True)
class PdeComparison:
    points: tuple
    label: str = ""

    @property
    def max_discrepancy(self):
        return max(p.discrepancy for p in self.points)

    @property
    def passed(self):
        return all(p.passed for p in self.points)

    def rows(self):
        """(t, x, u_fd, u_mc, ci_lo, ci_hi, budget, pass) per point."""
        return [(p.t, p.x, p.u_fd, p.u_mc, p.ci[0], p.ci[1], p.budget, p.passed) for p in self.points]


def compare_pde_mc(problem, grid, points=None, cfg=None, mc_problem=None, n_se=3.0, workers=1, mesh_c=0.5):
    """FD against Monte Carlo at each point.

    The budget per point is the FD truncation estimate (difference to the
    mesh with twice the steps in x and a quarter in t, a bound for a
    scheme of order at least one) plus ``n_se`` Monte Carlo standard
    errors.  ``mc_problem`` replaces the problem on the Monte Carlo side.
    """
    points = list(points if points is not None else standard_points(problem.T))
    for t, x in points:
        if not (grid.x_lo < x < grid.x_hi and 0.0 <= t <= problem.T):
            raise ValueError(f"point ({t}, {x}) outside the mesh")
    fine = fd_solve(problem, grid, mesh_c=mesh_c)
    finer = fd_solve(problem, grid.refined(), mesh_c=mesh_c)
    mc_problem = mc_problem or problem

    def one(pt):
        return feynman_kac_u(pt[0], pt[1], mc_problem, cfg)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            ests = list(pool.map(one, points))
    else:
        ests = [one(pt) for pt in points]
    out = []
    for (t, x), est in zip(points, ests):
        u_fd = float(fine.at(t, x))
        fd_err = abs(u_fd - float(finer.at(t, x)))
        out.append(PointComparison(t, x, u_fd, est.value, est.ci, est.stderr, fd_err, fd_err + n_se * est.stderr))
    return PdeComparison(tuple(out), problem.label)


@dataclass(frozen=True)
class GrowthReport:
    C: float
    C_inner: float
    p: float

    @property
    def passed(self):
        if not math.isfinite(self.C):
            return False
        if self.C_inner == 0.0:
            return self.C == 0.0
        return self.C <= 2.0 * self.C_inner


def check_growth(u, p, x=None, enlarge=1.5):
    """Minimal C with |u| <= C (1 + |x|^p) on the domain and on its centred shrink by ``enlarge``.

    ``u`` is a PdeSolution or an array whose last axis runs over ``x``.
    """
    if isinstance(u, PdeSolution):
        x = u.grid.x
        u = u.u
    if x is None:
        raise ValueError("sample locations x are required for raw values")
    x = np.asarray(x, dtype=np.float64)
    vals = np.abs(np.asarray(u, dtype=np.float64)).reshape(-1, x.size)
    ratio = np.max(vals, axis=0) / (1.0 + np.abs(x) ** p)
    c = 0.5 * (x.min() + x.max())
    half = 0.5 * (x.max() - x.min()) / enlarge
    inner = np.abs(x - c) <= half + 1e-12
    if not np.any(inner):
        raise ValueError("no samples in the inner domain")
    return GrowthReport(float(np.max(ratio)), float(np.max(ratio[inner])), float(p))
