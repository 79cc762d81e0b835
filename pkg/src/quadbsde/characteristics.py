"""Characteristic flows, the Theta transform and the exponential a priori bound.

The linear case solves ``v'(u) = -(alpha(u) + beta v(u))`` backwards from
``v(t) = x``; its value at the base time ``s`` is ``psi(t, x)``.  The general
case replaces ``alpha + beta v`` by ``rho(v) + alpha_bar`` and is solved through
``Theta(x) = int_0^x du / (rho(u) + alpha_bar)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._stats import LOG_MAX, ExponentialMomentError, bootstrap, log_mean_exp
from .model import BoundCertificate


class NonIntegrableError(ValueError):
    """``int du / h(u)`` stayed below the requested level on the quadrature window."""


def characteristic_flow(alpha, beta, t, x, u):
    """``v(u; t, x) = x e^{beta (t - u)} + int_u^t alpha(r) e^{beta (r - u)} dr``."""
    if u > t:
        raise ValueError(f"characteristic flow needs u <= t, got u={u}, t={t}")
    if x < 0:
        raise ValueError("characteristic flow is defined for x >= 0")
    return x * math.exp(beta * (t - u)) + alpha.weighted_integral(u, t, beta)


def psi_linear(alpha, beta, s, t, x):
    """``psi(t, x) = v(s; t, x)``, the flow read at the base time s."""
    if s > t:
        raise ValueError(f"psi needs s <= t, got s={s}, t={t}")
    return characteristic_flow(alpha, beta, t, x, s)


@dataclass(frozen=True, eq=False)
class LinearCharacteristics:
    """The linear-speed characteristic solution anchored at base time ``s``."""

    alpha: object
    beta: float
    s: float = 0.0

    def speed(self, t, x):
        return self.alpha(t) + self.beta * x

    def flow(self, u, t, x):
        return characteristic_flow(self.alpha, self.beta, t, x, u)

    def psi(self, t, x):
        return psi_linear(self.alpha, self.beta, self.s, t, x)

    def psi_x(self, t):
        return math.exp(self.beta * (t - self.s))


@dataclass(frozen=True, eq=False)
class ThetaTransform:
    """``Theta(x) = int_0^x du / (rho(u) + alpha_bar)`` and its inverse.

    The integral is tabulated by Simpson's rule on a geometric grid
    ``x_min * ratio^k`` up to ``x_max`` plus the first interval ``[0, x_min]``,
    so the steep region near 0 gets proportionally fine cells.
    """

    rho: Callable
    alpha_bar: float
    ratio: float = 1.01
    x_min: float = 1e-6
    x_max: float = 1e8
    inverse_tol: float = 1e-10

    def __post_init__(self):
        if not self.alpha_bar > 0:
            raise ValueError("alpha_bar > 0 violated")
        if float(self.rho(0.0)) != 0.0:
            raise ValueError("rho(0) = 0 violated")
        if not self.ratio > 1.0:
            raise ValueError("quadrature ratio > 1 violated")
        k = int(math.ceil(math.log(self.x_max / self.x_min) / math.log(self.ratio)))
        nodes = np.concatenate([[0.0], self.x_min * self.ratio ** np.arange(k + 1)])
        a, b = nodes[:-1], nodes[1:]
        pieces = self._simpson(a, b)
        table = np.concatenate([[0.0], np.cumsum(pieces)])
        object.__setattr__(self, "_nodes", nodes)
        object.__setattr__(self, "_table", table)

    def speed(self, u):
        return np.asarray(self.rho(u), dtype=np.float64) + self.alpha_bar

    def _simpson(self, a, b):
        m = 0.5 * (a + b)
        return (b - a) / 6.0 * (1.0 / self.speed(a) + 4.0 / self.speed(m) + 1.0 / self.speed(b))

    @property
    def upper(self):
        """Theta at the end of the quadrature window."""
        return float(self._table[-1])

    def __call__(self, x):
        x = float(x)
        if x < 0:
            raise ValueError("Theta is defined for x >= 0")
        if x > self._nodes[-1]:
            raise NonIntegrableError(f"x = {x} beyond the quadrature window {self.x_max}")
        k = int(np.searchsorted(self._nodes, x, side="right")) - 1
        k = min(k, self._nodes.size - 2)
        return float(self._table[k] + self._simpson(np.array(self._nodes[k]), np.array(x)))

    def inverse(self, level):
        """Solve ``Theta(x) = level`` by bisection."""
        if level < 0:
            raise ValueError("Theta inverse needs a nonnegative level")
        if level > self.upper:
            raise NonIntegrableError(
                f"int du/h reaches only {self.upper:.6g} on [0, {self.x_max:g}] but {level:.6g} was requested"
            )
        k = int(np.searchsorted(self._table, level, side="right")) - 1
        k = min(max(k, 0), self._nodes.size - 2)
        lo, hi = float(self._nodes[k]), float(self._nodes[k + 1])
        while hi - lo > self.inverse_tol and hi - lo > 4 * np.spacing(hi):
            mid = 0.5 * (lo + hi)
            if self(mid) < level:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)


def theta_psi(transform, s, t, x):
    """``Theta^{-1}(t - s + Theta(x))``."""
    if s > t:
        raise ValueError(f"theta_psi needs s <= t, got s={s}, t={t}")
    if x < 0:
        raise ValueError("theta_psi is defined for x >= 0")
    return transform.inverse(t - s + transform(x))


def apriori_exponent(params, xi, t=0.0):
    """Per-path exponent ``gamma e^{beta (T - t)} |xi| + gamma int_t^T alpha e^{beta (r - t)} dr``."""
    g, b, T = params.gamma, params.beta, params.T
    return g * math.exp(b * (T - t)) * np.abs(np.asarray(xi, dtype=np.float64)) + g * params.alpha.weighted_integral(t, T, b)


def checked_log_mean_exp(exponent, what="exponential moment"):
    """log of the sample mean of exp(exponent), refusing unrepresentable results."""
    exponent = np.asarray(exponent, dtype=np.float64)
    if not np.all(np.isfinite(exponent)):
        raise ExponentialMomentError(f"{what}: non-finite exponent")
    value = float(log_mean_exp(exponent))
    if value > LOG_MAX:
        raise ExponentialMomentError(f"{what} appears infinite: log mean = {value:.4g} exceeds {LOG_MAX:.4g}")
    return value


def apriori_bound(params, xi, t=0.0, n_boot=200, seed=0):
    """Evaluate the exponential a priori bound on |Y_0| from terminal samples.

    Returns a certificate with ``statistic=None`` and the bound
    ``(1/gamma) log mean exp(gamma e^{beta T}|xi| + gamma int_0^T alpha e^{beta r} dr)``
    with a percentile bootstrap interval.

    Raises
    ------
    ExponentialMomentError
        if the exponential sample mean is not representable in double precision.
    """
    xi = np.asarray(xi, dtype=np.float64)
    if xi.size == 0:
        raise ValueError("apriori_bound needs terminal samples")
    if t != 0.0:
        raise ValueError("the unconditional bound is evaluated at t = 0; interior times need regression")
    g = params.gamma
    a = apriori_exponent(params, xi, 0.0)
    value = checked_log_mean_exp(a, "a priori bound") / g
    se, ci = bootstrap(lambda s: log_mean_exp(s) / g, a, n_boot=n_boot, seed=seed)
    return BoundCertificate("apriori_bound", None, value, se, ci, seed=seed,
                            details={"gamma": g, "beta": params.beta, "M": int(xi.size)})
