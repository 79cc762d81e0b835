"""Small Monte Carlo helpers shared by the estimators."""
from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp

# log of the largest finite double; exponential means above this are not
# representable and are treated as "infinite" moments.
LOG_MAX = math.log(np.finfo(np.float64).max)


class ExponentialMomentError(ArithmeticError):
    """An exponential sample mean overflowed double precision."""


def log_mean_exp(a, axis=None):
    """``log(mean(exp(a)))`` without overflow; exact when all entries agree."""
    a = np.asarray(a, dtype=np.float64)
    if axis is None and a.size and np.all(a == a.flat[0]):
        return float(a.flat[0])
    n = a.size if axis is None else a.shape[axis]
    return logsumexp(a, axis=axis) - math.log(n)


def path_mean(values):
    """Mean over paths that is exact when every path carries the same value."""
    values = np.asarray(values, dtype=np.float64)
    first = values.flat[0]
    if np.all(values == first):
        return float(first)
    return float(values.mean())


def mean_stderr(values):
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return 0.0
    return float(values.std(ddof=1) / math.sqrt(values.size))


def log_mean_exp_stderr(a):
    """Delta-method standard error of ``log(mean(exp(a)))``."""
    a = np.asarray(a, dtype=np.float64)
    if a.size < 2:
        return 0.0
    w = np.exp(a - a.max())
    m = w.mean()
    return float(w.std(ddof=1) / (m * math.sqrt(a.size)))


def bootstrap(statistic, samples, n_boot=200, seed=0, level=0.95):
    """Percentile bootstrap of ``statistic(samples)``.

    Returns (standard error, (lo, hi)).  Resampling indices come from a
    seeded generator, so results are reproducible.
    """
    samples = np.asarray(samples)
    n = samples.shape[0]
    rng = np.random.default_rng(seed)
    reps = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, n, size=n)
        reps[b] = statistic(samples[idx])
    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(reps, [tail, 100.0 - tail])
    return float(reps.std(ddof=1)), (float(lo), float(hi))
