"""Brownian ensembles, Euler--Maruyama forward paths and exponential moments."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtri

from . import kernels
from ._stats import bootstrap, log_mean_exp, log_mean_exp_stderr
from .characteristics import checked_log_mean_exp
from .model import TimeGrid


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Brownian increments and optional forward states on a time grid.

    Attributes
    ----------
    increments : (M, N, d) array of Brownian increments over each cell.
    states : (M, N + 1, n) array of forward states, or None.
    t0, x0 : start of the forward process; states equal x0 up to t0.
    """

    seed: int
    grid: TimeGrid
    increments: np.ndarray
    states: Optional[np.ndarray] = None
    t0: float = 0.0
    x0: Optional[np.ndarray] = None
    path_start: int = 0

    @property
    def M(self):
        return self.increments.shape[0]

    @property
    def d(self):
        return self.increments.shape[2]

    @cached_property
    def brownian(self):
        """(M, N + 1, d) Brownian paths started at 0."""
        M, N, d = self.increments.shape
        out = np.empty((M, N + 1, d))
        out[:, 0, :] = 0.0
        np.cumsum(self.increments, axis=1, out=out[:, 1:, :])
        return out

    @property
    def start_layer(self):
        return self.grid.index_of(self.t0)

    def key(self):
        """Identity of the underlying noise; two ensembles with equal keys share paths."""
        return (self.seed, self.path_start, self.M, self.d, self.grid.T, self.grid.N)


def simulate_brownian(grid, M, d=1, seed=0, path_start=0):
    """Counter-based Brownian increments.

    The increment of path m, step i, coordinate k depends only on
    ``(seed, path_start + m, i, k)``, so ensembles are reproducible bit for
    bit and any block of paths can be regenerated on its own.
    """
    if M < 1 or d < 1:
        raise ValueError("M >= 1 and d >= 1 required")
    u = kernels.philox_uniforms(seed, path_start, M, grid.N, d)
    inc = ndtri(u, out=u)
    inc *= math.sqrt(grid.dt)
    return PathEnsemble(int(seed), grid, inc, path_start=int(path_start))


# --------------------------------------------------------------------------
# coefficients
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SdeCoefficients:
    """Drift ``b(t, x) -> (M, n)`` and diffusion ``sigma(t, x) -> (M, n, d)``.

    ``beta`` is the declared Lipschitz constant of b and sigma (and bound on
    ``|b(t, 0)|``); ``sigma_bound`` the declared sup of ``|sigma|``.
    """

    b: Callable
    sigma: Callable
    beta: float
    sigma_bound: float
    n: int = 1
    d: int = 1

    @classmethod
    def brownian(cls, d=1):
        eye = np.eye(d)
        return cls(lambda t, x: np.zeros_like(x), lambda t, x: np.broadcast_to(eye, (x.shape[0], d, d)),
                   0.0, 1.0, d, d)

    @classmethod
    def ornstein_uhlenbeck(cls, rate=1.0, vol=1.0):
        return cls(lambda t, x: -rate * x, lambda t, x: np.full((x.shape[0], 1, 1), float(vol)),
                   abs(rate), abs(vol), 1, 1)

    @classmethod
    def scalar(cls, b, sigma, beta, sigma_bound):
        """One-dimensional coefficients given as functions of (t, x) on 1-D arrays."""
        def drift(t, x):
            return np.asarray(b(t, x[:, 0]), dtype=np.float64).reshape(-1, 1) + np.zeros_like(x)

        def diffusion(t, x):
            s = np.asarray(sigma(t, x[:, 0]), dtype=np.float64)
            return np.broadcast_to(s, (x.shape[0],)).reshape(-1, 1, 1)

        return cls(drift, diffusion, float(beta), float(sigma_bound), 1, 1)


@dataclass(frozen=True)
class SdeCertificate:
    drift_at_origin: float
    drift_lipschitz: float
    diffusion_lipschitz: float
    diffusion_sup: float
    beta: float
    sigma_bound: float
    tol: float

    @property
    def passed(self):
        lim = self.beta * (1.0 + self.tol)
        return (self.drift_at_origin <= lim + self.tol and self.drift_lipschitz <= lim + self.tol
                and self.diffusion_lipschitz <= lim + self.tol
                and self.diffusion_sup <= self.sigma_bound * (1.0 + self.tol))


def certify_sde_coefficients(coeff, T=1.0, budget=2048, tol=1e-9, seed=0, scale=10.0):
    """Sampled Lipschitz and boundedness check of the forward coefficients."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, T)
    x = rng.standard_normal((budget, coeff.n)) * scale
    x2 = x + rng.standard_normal((budget, coeff.n)) * np.exp(rng.uniform(-5, 1, (budget, 1)))
    dx = np.linalg.norm(x - x2, axis=1)
    b0 = float(np.max(np.linalg.norm(coeff.b(t, np.zeros((1, coeff.n))), axis=1)))
    db = np.linalg.norm(coeff.b(t, x) - coeff.b(t, x2), axis=1)
    s1 = np.asarray(coeff.sigma(t, x))
    s2 = np.asarray(coeff.sigma(t, x2))
    ds = np.linalg.norm((s1 - s2).reshape(budget, -1), axis=1)
    sup = float(np.max(np.linalg.norm(s1.reshape(budget, -1), axis=1)))
    return SdeCertificate(b0, float(np.max(db / dx)), float(np.max(ds / dx)), sup,
                          coeff.beta, coeff.sigma_bound, tol)


def simulate_sde(coeff, t0, x0, ensemble):
    """Euler--Maruyama states; ``X_i = x0`` for ``t_i <= t0``."""
    grid = ensemble.grid
    i0 = grid.index_of(t0)
    M, N, d = ensemble.increments.shape
    if d != coeff.d:
        raise ValueError(f"ensemble has d={d}, coefficients expect d={coeff.d}")
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    if x0.shape != (coeff.n,):
        raise ValueError(f"x0 must have shape ({coeff.n},)")
    X = np.empty((M, N + 1, coeff.n))
    X[:, : i0 + 1, :] = x0
    dt = grid.dt
    t = grid.times
    for i in range(i0, N):
        xi = X[:, i, :]
        sig = coeff.sigma(t[i], xi)
        dB = ensemble.increments[:, i, :]
        if coeff.n == 1 and d == 1:
            noise = sig[:, 0, :] * dB
        else:
            noise = np.einsum("mij,mj->mi", sig, dB)
        X[:, i + 1, :] = xi + coeff.b(t[i], xi) * dt + noise
    return replace(ensemble, states=X, t0=float(grid.times[i0]), x0=x0)


# --------------------------------------------------------------------------
# exponential moments
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExpMomentEstimate:
    value: float
    log_value: float
    stderr: float
    ci: tuple
    fitted_C: float
    lam: float
    p: float


def fit_moment_constant(log_value, lam, x0_norm_p):
    """Smallest C with ``log C + lam C |x0|^p >= log_value``."""
    def g(c):
        return math.log(c) + lam * c * x0_norm_p - log_value

    lo = 1e-300
    hi = max(2.0, math.exp(max(log_value, 0.0)) + 1.0)
    if g(hi) < 0:  # only possible through rounding
        return hi
    return brentq(g, lo, hi, xtol=1e-14, rtol=1e-12)


def estimate_exp_moment(ensemble, lam, p, n_boot=200, seed=0):
    """Monte Carlo estimate of ``E[sup_t exp(lam |X_t|^p)]``.

    Raises
    ------
    ValueError
        if p is outside [1, 2) or states are missing.
    ExponentialMomentError
        if the sample mean overflows ("appears infinite at this lam, p").
    """
    if not 1.0 <= p < 2.0:
        raise ValueError("exponent 1 <= p < 2 violated")
    if ensemble.states is None:
        raise ValueError("estimate_exp_moment needs simulated states")
    X = ensemble.states
    sup_norm = np.max(np.linalg.norm(X, axis=2), axis=1)
    a = lam * sup_norm**p
    logv = checked_log_mean_exp(a, f"exponential moment at lam={lam}, p={p}")
    value = math.exp(logv)
    se = value * log_mean_exp_stderr(a)
    _, (lo, hi) = bootstrap(log_mean_exp, a, n_boot=n_boot, seed=seed)
    x0 = ensemble.x0 if ensemble.x0 is not None else np.zeros(X.shape[2])
    c = fit_moment_constant(logv, lam, float(np.linalg.norm(x0)) ** p)
    return ExpMomentEstimate(value, logv, se, (math.exp(lo), math.exp(hi)), c, float(lam), float(p))


@dataclass(frozen=True)
class GronwallReport:
    violations: int
    max_ratio: float

    @property
    def passed(self):
        return self.violations == 0


def gronwall_check(ensemble, coeff):
    """Pathwise ``sup|X| <= (|x0| + beta T + sup|int sigma dB|) e^{beta T}``.

    The martingale term is rebuilt from the simulated increments along the
    same Euler path.  ``max_ratio`` is the largest ratio of the two sides.
    """
    X = ensemble.states
    if X is None:
        raise ValueError("gronwall_check needs simulated states")
    grid = ensemble.grid
    i0 = grid.index_of(ensemble.t0)
    t = grid.times
    M = X.shape[0]
    mart = np.zeros((M, coeff.n))
    sup_mart = np.zeros(M)
    for i in range(i0, grid.N):
        sig = coeff.sigma(t[i], X[:, i, :])
        mart += np.einsum("mij,mj->mi", sig, ensemble.increments[:, i, :])
        np.maximum(sup_mart, np.linalg.norm(mart, axis=1), out=sup_mart)
    horizon = grid.T - ensemble.t0
    x0n = float(np.linalg.norm(ensemble.x0)) if ensemble.x0 is not None else 0.0
    rhs = (x0n + coeff.beta * horizon + sup_mart) * math.exp(coeff.beta * horizon)
    lhs = np.max(np.linalg.norm(X, axis=2), axis=1)
    ratio = lhs / np.where(rhs > 0, rhs, np.inf)
    return GronwallReport(int(np.sum(lhs > rhs * (1 + 1e-12) + 1e-300)), float(ratio.max()))
