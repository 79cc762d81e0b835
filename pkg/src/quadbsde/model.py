"""Domain types: rate processes, drivers, terminal conditions, grids, certificates.

Every type here is immutable after construction.  Drivers are evaluated on
whole path arrays at once: ``y`` has shape ``(M,)`` and ``z`` shape ``(M, d)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

FAMILIES = ("zero", "linear-in-y", "pure-quadratic", "linear-plus-quadratic", "convex-custom")


# --------------------------------------------------------------------------
# deterministic rate process
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AlphaProcess:
    """Nonnegative piecewise-constant function of time on ``[0, T]``.

    Parameters
    ----------
    breakpoints : array of K + 1 increasing times, first 0 and last T.
    values : array of K nonnegative levels; ``values[k]`` holds on
        ``[breakpoints[k], breakpoints[k + 1])``.
    """

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        bp = np.array(self.breakpoints, dtype=np.float64)
        vals = np.array(self.values, dtype=np.float64).reshape(-1)
        if bp.ndim != 1 or bp.size != vals.size + 1 or vals.size == 0:
            raise ValueError("breakpoints must have exactly one more entry than values")
        if bp[0] != 0.0 or not np.all(np.diff(bp) > 0):
            raise ValueError("breakpoints must start at 0 and increase strictly")
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise ValueError("alpha values must be finite and >= 0")
        bp.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)
        cum = np.concatenate([[0.0], np.cumsum(vals * np.diff(bp))])
        cum.setflags(write=False)
        object.__setattr__(self, "_cum", cum)

    @classmethod
    def constant(cls, a, T):
        if not T > 0:
            raise ValueError("T > 0 violated")
        return cls(np.array([0.0, float(T)]), np.array([float(a)]))

    @property
    def T(self):
        return float(self.breakpoints[-1])

    def _piece(self, t):
        k = np.searchsorted(self.breakpoints, t, side="right") - 1
        return np.clip(k, 0, self.values.size - 1)

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        out = self.values[self._piece(t)]
        return float(out) if out.ndim == 0 else out

    def cumulative(self, t):
        """Exact ``int_0^t alpha``."""
        t = np.clip(np.asarray(t, dtype=np.float64), 0.0, self.T)
        k = self._piece(t)
        out = self._cum[k] + self.values[k] * (t - self.breakpoints[k])
        return float(out) if out.ndim == 0 else out

    def integral(self, u, t):
        return self.cumulative(t) - self.cumulative(u)

    @property
    def l1(self):
        return float(self._cum[-1])

    def weighted_integral(self, u, t, beta):
        """Exact ``int_u^t alpha(r) exp(beta (r - u)) dr``."""
        if u > t:
            raise ValueError("weighted_integral needs u <= t")
        if beta == 0.0:
            return self.integral(u, t)
        total = 0.0
        for k, a in enumerate(self.values):
            lo = max(u, self.breakpoints[k])
            hi = min(t, self.breakpoints[k + 1])
            if hi <= lo or a == 0.0:
                continue
            total += a * math.exp(beta * (lo - u)) * math.expm1(beta * (hi - lo)) / beta
        return total

    def cutoff_time(self, n):
        """``inf{t : int_0^t alpha >= n}``, capped at T."""
        if n is None or not math.isfinite(n) or n >= self.l1:
            return self.T
        k = int(np.searchsorted(self._cum, n, side="left")) - 1
        k = max(k, 0)
        return float(self.breakpoints[k] + (n - self._cum[k]) / self.values[k])

    def truncate(self, until):
        """``alpha * 1{t <= until}`` as a new process."""
        if until >= self.T:
            return self
        bp = list(self.breakpoints[self.breakpoints < until]) + [until, self.T]
        vals = [self(b) for b in bp[:-2]] + [0.0]
        if until <= 0.0:
            bp, vals = [0.0, self.T], [0.0]
        return AlphaProcess(np.array(bp), np.array(vals))

    def plus(self, c):
        return AlphaProcess(self.breakpoints, self.values + float(c))

    def cell_averages(self, grid):
        """Exact averages of alpha over the cells of a time grid."""
        t = grid.times
        return np.diff(self.cumulative(t)) / grid.dt

    def to_dict(self):
        return {"breakpoints": self.breakpoints.tolist(), "values": self.values.tolist()}


# --------------------------------------------------------------------------
# growth functions phi
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearGrowth:
    slope: float

    def __call__(self, x):
        return self.slope * np.asarray(x, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class TabulatedGrowth:
    """Piecewise-linear phi through (xs, vals), extended with the last slope."""

    xs: np.ndarray
    vals: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=np.float64)
        vals = np.asarray(self.vals, dtype=np.float64)
        if xs.size < 2 or xs[0] != 0.0 or not np.all(np.diff(xs) > 0):
            raise ValueError("tabulated phi needs increasing nodes starting at 0")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "vals", vals)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        slope = (self.vals[-1] - self.vals[-2]) / (self.xs[-1] - self.xs[-2])
        inner = np.interp(x, self.xs, self.vals)
        return np.where(x > self.xs[-1], self.vals[-1] + slope * (x - self.xs[-1]), inner)


def _check_growth_fn(phi):
    probe = np.concatenate([[0.0], np.geomspace(1e-6, 1e6, 200)])
    vals = np.asarray(phi(probe), dtype=np.float64)
    if vals[0] != 0.0:
        raise ValueError("phi(0) = 0 violated")
    if np.any(np.diff(vals) < 0):
        raise ValueError("phi nondecreasing violated")


# --------------------------------------------------------------------------
# assumption constants and drivers
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AssumptionParams:
    """Constants of the growth and regularity assumptions on a driver."""

    beta: float
    gamma: float
    alpha: AlphaProcess
    T: float
    phi: Optional[Callable] = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma > 0 violated")
        if not self.beta >= 0:
            raise ValueError("beta >= 0 violated")
        if not self.T > 0:
            raise ValueError("T > 0 violated")
        if abs(self.alpha.T - self.T) > 1e-12 * max(1.0, self.T):
            raise ValueError("alpha must be defined on [0, T]")
        if self.phi is None:
            object.__setattr__(self, "phi", LinearGrowth(self.beta))
        _check_growth_fn(self.phi)

    @classmethod
    def simple(cls, gamma=1.0, beta=0.0, alpha=0.0, T=1.0):
        return cls(beta=float(beta), gamma=float(gamma), alpha=AlphaProcess.constant(alpha, T), T=float(T))

    def with_alpha(self, alpha):
        return replace(self, alpha=alpha)


def _sqnorm(z):
    z = np.asarray(z, dtype=np.float64)
    return np.sum(z * z, axis=-1)


@dataclass(frozen=True, eq=False)
class DriverSpec:
    """A generator f(t, y, z) from one of the built-in families.

    ``y_coef`` is the slope of the affine y-term (defaults to beta for the
    linear families).  ``zfunc`` is the convex function of z used by the
    convex-custom family.  ``cutoff_pos`` / ``cutoff_neg`` switch the
    positive / negative part of f off after the given times; they implement
    the truncated drivers of the existence argument.
    """

    family: str
    params: AssumptionParams
    d: int = 1
    y_coef: Optional[float] = None
    zfunc: Optional[Callable] = None
    cutoff_pos: Optional[float] = None
    cutoff_neg: Optional[float] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown driver family {self.family!r}; expected one of {FAMILIES}")
        if self.d < 1:
            raise ValueError("d >= 1 violated")
        if self.y_coef is None:
            k = self.params.beta if self.family in ("linear-in-y", "linear-plus-quadratic") else 0.0
            object.__setattr__(self, "y_coef", float(k))
        if self.family == "convex-custom" and self.zfunc is None:
            raise ValueError("convex-custom driver needs zfunc")

    # construction helpers -------------------------------------------------

    @classmethod
    def zero(cls, params, d=1):
        return cls("zero", params, d)

    @classmethod
    def linear(cls, params, y_coef=None, d=1):
        return cls("linear-in-y", params, d, y_coef=y_coef)

    @classmethod
    def quadratic(cls, params, d=1):
        return cls("pure-quadratic", params, d)

    @classmethod
    def linear_quadratic(cls, params, y_coef=None, d=1):
        return cls("linear-plus-quadratic", params, d, y_coef=y_coef)

    @classmethod
    def convex_custom(cls, params, zfunc, y_coef=0.0, d=1):
        return cls("convex-custom", params, d, y_coef=y_coef, zfunc=zfunc)

    @property
    def gamma(self):
        return self.params.gamma

    @property
    def beta(self):
        return self.params.beta

    @property
    def T(self):
        return self.params.T

    @property
    def uses_alpha(self):
        return self.family in ("linear-in-y", "pure-quadratic", "linear-plus-quadratic")

    @property
    def quadratic_in_z(self):
        return self.family in ("pure-quadratic", "linear-plus-quadratic")

    @property
    def truncated(self):
        return self.cutoff_pos is not None or self.cutoff_neg is not None

    def evaluate(self, t, y, z, x=None):
        """Vectorized f(t, y, z); ``x`` is accepted for state-driven callers and ignored."""
        y = np.asarray(y, dtype=np.float64)
        if self.family == "zero":
            out = np.zeros(np.broadcast_shapes(y.shape, np.shape(z)[:-1]))
        elif self.family == "convex-custom":
            out = np.asarray(self.zfunc(np.asarray(z, dtype=np.float64)), dtype=np.float64) + self.y_coef * y
        else:
            out = self.params.alpha(t)
            if self.family in ("linear-in-y", "linear-plus-quadratic"):
                out = out + self.y_coef * y
            if self.quadratic_in_z:
                out = out + 0.5 * self.gamma * _sqnorm(z)
            out = np.broadcast_to(out, np.broadcast_shapes(np.shape(out), y.shape, np.shape(z)[:-1]))
        if self.truncated:
            out = self._apply_cutoff(t, out)
        return out

    def _apply_cutoff(self, t, out):
        t = np.asarray(t, dtype=np.float64)
        keep_pos = True if self.cutoff_pos is None else t <= self.cutoff_pos
        keep_neg = True if self.cutoff_neg is None else t <= self.cutoff_neg
        pos = np.where(keep_pos, np.maximum(out, 0.0), 0.0)
        neg = np.where(keep_neg, np.minimum(out, 0.0), 0.0)
        return pos + neg

    def growth_bound(self, t, y, z):
        """alpha(t) + phi(|y|) + gamma/2 |z|^2, summed in the same order as ``evaluate``."""
        y = np.asarray(y, dtype=np.float64)
        return self.params.alpha(t) + self.params.phi(np.abs(y)) + 0.5 * self.gamma * _sqnorm(z)

    def with_params(self, params):
        return replace(self, params=params)

    def describe(self):
        out = {"family": self.family, "gamma": self.gamma, "beta": self.beta, "y_coef": self.y_coef, "d": self.d}
        if self.truncated:
            out["cutoff_pos"] = self.cutoff_pos
            out["cutoff_neg"] = self.cutoff_neg
        return out


def eval_driver(driver, t, y, z):
    """Scalar evaluation of f(t, y, z) with argument checks.

    Raises
    ------
    ValueError
        if ``z`` does not have the driver's dimension or ``t`` is outside [0, T].
    """
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    if z.shape != (driver.d,):
        raise ValueError(f"z has shape {z.shape}, driver expects ({driver.d},)")
    if not 0.0 <= t <= driver.T:
        raise ValueError(f"t = {t} outside [0, {driver.T}]")
    return float(driver.evaluate(t, np.array([float(y)]), z[None, :])[0])


# --------------------------------------------------------------------------
# sampled certification
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AssumptionCertificate:
    convexity_violation: float
    lipschitz_violation: float
    growth_violation: float
    lipschitz_ratio: float
    growth_slack: float
    budget: int
    tol: float
    seed: int

    @property
    def passed(self):
        return max(self.convexity_violation, self.lipschitz_violation, self.growth_violation) <= self.tol


def _log_uniform_scale(rng, size, lo=1e-2, hi=10.0):
    return np.exp(rng.uniform(math.log(lo), math.log(hi), size))


def certify_assumptions(driver, budget=4096, tol=1e-9, seed=0):
    """Sampled check of convexity in z, Lipschitz continuity in y and the growth bound.

    Sample magnitudes are log-uniform over [1e-2, 10] so both the small-z and
    the large-z regimes are exercised.  The result depends only on
    (driver, budget, seed).
    """
    if budget < 1:
        raise ValueError("budget >= 1 violated")
    rng = np.random.default_rng(seed)
    d, T = driver.d, driver.T
    t = rng.uniform(0.0, T, budget)
    y = rng.standard_normal(budget) * _log_uniform_scale(rng, budget)
    y2 = rng.standard_normal(budget) * _log_uniform_scale(rng, budget)
    z = rng.standard_normal((budget, d)) * _log_uniform_scale(rng, (budget, 1))
    z2 = rng.standard_normal((budget, d)) * _log_uniform_scale(rng, (budget, 1))
    lam = rng.uniform(0.0, 1.0, budget)

    f = driver.evaluate
    fz = f(t, y, z)
    fz2 = f(t, y, z2)
    fmid = f(t, y, lam[:, None] * z + (1.0 - lam[:, None]) * z2)
    deficit = fmid - (lam * fz + (1.0 - lam) * fz2)
    convexity = float(max(0.0, deficit.max()))

    fy2 = f(t, y2, z)
    dy = np.abs(y - y2)
    df = np.abs(fz - fy2)
    lip_excess = df - driver.beta * dy
    lipschitz = float(max(0.0, lip_excess.max()))
    ratio = float(np.max(np.where(dy > 0, df / np.where(dy > 0, dy, 1.0), 0.0)))

    bound = driver.growth_bound(t, y, z)
    excess = np.abs(fz) - bound
    growth = float(max(0.0, excess.max()))
    slack = float((-excess).min())
    return AssumptionCertificate(convexity, lipschitz, growth, ratio, slack, int(budget), float(tol), int(seed))


# --------------------------------------------------------------------------
# terminal conditions
# --------------------------------------------------------------------------

_BROWNIAN_FUNCS = {
    "identity": lambda b: b,
    "abs": np.abs,
    "square": np.square,
}


@dataclass(frozen=True, eq=False)
class TerminalSpec:
    """Terminal value xi.

    kind ``constant`` gives xi = value.  kind ``brownian`` gives
    ``shift + scale * h(B_T)`` with h a named function of the first Brownian
    coordinate (identity, abs, square) or a callable of the full ``(M, d)``
    array.  kind ``state`` gives ``shift + scale * g(X_T)``.  ``trunc_pos`` /
    ``trunc_neg`` (n and p) clip the result to ``[-p, n]``.
    """

    kind: str
    value: float = 0.0
    func: object = "identity"
    scale: float = 1.0
    shift: float = 0.0
    growth_p: float = 1.0
    trunc_pos: Optional[float] = None
    trunc_neg: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("constant", "brownian", "state"):
            raise ValueError(f"unknown terminal kind {self.kind!r}")
        if not 1.0 <= self.growth_p < 2.0:
            raise ValueError("growth exponent 1 <= p < 2 violated")
        if isinstance(self.func, str) and self.kind == "brownian" and self.func not in _BROWNIAN_FUNCS:
            raise ValueError(f"unknown Brownian functional {self.func!r}")
        if self.kind == "state" and not callable(self.func):
            raise ValueError("state terminal needs a callable g")
        for name in ("trunc_pos", "trunc_neg"):
            v = getattr(self, name)
            if v is not None and not v >= 1:
                raise ValueError(f"truncation index {name} >= 1 violated")

    @classmethod
    def constant(cls, value):
        return cls("constant", value=float(value))

    @classmethod
    def brownian(cls, func="identity", scale=1.0, shift=0.0):
        return cls("brownian", func=func, scale=float(scale), shift=float(shift))

    @classmethod
    def state(cls, g, p=1.0):
        return cls("state", func=g, growth_p=float(p))

    @property
    def truncated(self):
        return self.trunc_pos is not None or self.trunc_neg is not None

    def raw_sample(self, ensemble):
        M = ensemble.M
        if self.kind == "constant":
            return np.full(M, self.value)
        if self.kind == "brownian":
            bT = ensemble.brownian[:, -1, :]
            h = _BROWNIAN_FUNCS[self.func](bT[:, 0]) if isinstance(self.func, str) else self.func(bT)
        else:
            if ensemble.states is None:
                raise ValueError("state terminal needs simulated states")
            xT = ensemble.states[:, -1, :]
            h = self.func(xT[:, 0] if xT.shape[1] == 1 else xT)
        return self.shift + self.scale * np.asarray(h, dtype=np.float64)

    def sample(self, ensemble):
        xi = self.raw_sample(ensemble)
        if self.truncated:
            hi = np.inf if self.trunc_pos is None else self.trunc_pos
            lo = -np.inf if self.trunc_neg is None else -self.trunc_neg
            xi = np.clip(xi, lo, hi)
        return xi

    def truncate(self, n, p):
        return replace(self, trunc_pos=n, trunc_neg=p)

    def describe(self):
        func = self.func if isinstance(self.func, str) else getattr(self.func, "__name__", "callable")
        return {"kind": self.kind, "value": self.value, "func": func, "scale": self.scale,
                "shift": self.shift, "trunc_pos": self.trunc_pos, "trunc_neg": self.trunc_neg}


# --------------------------------------------------------------------------
# time grid and problem records
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N >= 1 violated")
        if not self.T > 0:
            raise ValueError("T > 0 violated")

    @property
    def dt(self):
        return self.T / self.N

    @property
    def times(self):
        t = np.arange(self.N + 1) * self.dt
        t[-1] = self.T
        return t

    def index_of(self, t, tol=1e-9):
        i = int(round(t / self.dt))
        if not 0 <= i <= self.N or abs(i * self.dt - t) > tol * max(1.0, self.T):
            raise ValueError(f"t = {t} is not a node of the grid (T={self.T}, N={self.N})")
        return i


@dataclass(frozen=True, eq=False)
class Problem:
    driver: DriverSpec
    terminal: TerminalSpec
    label: str = ""


@dataclass(frozen=True, eq=False)
class BoundCertificate:
    """A statistic checked against a bound with a 3-standard-error allowance.

    ``statistic`` may be None for certificates that only evaluate a bound.
    """

    name: str
    statistic: Optional[float]
    bound: float
    stderr: float = 0.0
    ci: tuple = (math.nan, math.nan)
    parameter: Optional[float] = None
    seed: Optional[int] = None
    details: dict = field(default_factory=dict)

    @property
    def slack(self):
        return None if self.statistic is None else self.bound - self.statistic

    @property
    def passed(self):
        if self.statistic is None:
            return bool(np.isfinite(self.bound))
        allowance = 3.0 * self.stderr + 1e-12 * max(1.0, abs(self.bound))
        return bool(self.statistic <= self.bound + allowance)
