"""Least-squares Monte Carlo for quadratic BSDEs and the exponential-transform oracle.

Backward step on cell i (``dB_i = B_{i+1} - B_i``)::

    E_i   = regress(Y_{i+1})
    Z_i   = regress((Y_{i+1} - E_i) dB_i) / dt
    Y_i   = E_i + dt f(t_i, Y_i, clip(Z_i))      # fixed point in Y_i

Subtracting E_i before the Z regression leaves its conditional mean
unchanged and removes the ``Var(Y) / (M dt)`` noise that would otherwise be
squared by a quadratic driver and summed over layers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import combinations_with_replacement
from typing import Optional

import numpy as np

from ._stats import ExponentialMomentError, log_mean_exp, log_mean_exp_stderr, mean_stderr, path_mean
from .model import DriverSpec


class PicardDivergence(RuntimeError):
    def __init__(self, layer, residual, iterations):
        super().__init__(f"Picard iteration did not converge at layer {layer}: "
                         f"residual {residual:.3e} after {iterations} iterations")
        self.layer = layer
        self.residual = residual


class SingularRegression(RuntimeError):
    def __init__(self, layer, cond):
        super().__init__(f"regression at layer {layer} is singular: condition number {cond:.3e}")
        self.layer = layer
        self.cond = cond


def _standardize(x):
    """Columns of x with nonzero spread, centred and scaled."""
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    live = sd > 1e-12 * np.maximum(1.0, np.abs(mu))
    return (x[:, live] - mu[live]) / sd[live]


def _monomials(u, degree):
    """Constant column followed by all monomials of total degree 1..degree."""
    M, k = u.shape
    cols = [np.ones(M)]
    for deg in range(1, degree + 1 if k else 1):
        for combo in combinations_with_replacement(range(k), deg):
            c = u[:, combo[0]].copy()
            for j in combo[1:]:
                c *= u[:, j]
            cols.append(c)
    return np.column_stack(cols)


@dataclass(frozen=True)
class RegressionBasis:
    """Polynomials of the standardized Brownian value or state, global or cell-wise.

    Parameters
    ----------
    kind : ``"brownian"`` (regress on B_{t_i}) or ``"state"`` (on X_{t_i}).
    degree : maximal total degree, >= 0.
    cells : equiprobable cells per regressor coordinate.  With 1 a single
        global polynomial is fitted; with more, a separate polynomial is
        fitted on each cell of the empirical quantile grid.  Global
        polynomials fit kinked or fast-growing functions poorly in the tails,
        and a quadratic driver feeds that error back at every step.  The
        count is reduced when a cell would hold fewer than ``min_paths``
        paths per basis function.
    tail_degree : degree used on the unbounded end cells, where a
        high-degree fit extrapolates into sparsely sampled tails.
    clip : optional (lo, hi) bounds applied to the raw regressor.
    subsample : fraction of paths used to fit coefficients; predictions are
        made on every path.  Fractions below 1 with different ``seed``
        values give independent re-solves for noise calibration.
    ridge : Tikhonov weight on the non-constant coefficients.
    """

    kind: str = "brownian"
    degree: int = 3
    cells: int = 8
    clip: Optional[tuple] = None
    subsample: float = 1.0
    seed: int = 0
    ridge: float = 1e-10
    max_cond: float = 1e12
    min_paths: int = 10
    tail_degree: int = 1

    def __post_init__(self):
        if self.kind not in ("brownian", "state"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.degree < 0:
            raise ValueError("degree >= 0 violated")
        if self.tail_degree < 0:
            raise ValueError("tail_degree >= 0 violated")
        if self.cells < 1:
            raise ValueError("cells >= 1 violated")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample fraction must lie in (0, 1]")

    def regressors(self, ensemble, i):
        if self.kind == "brownian":
            x = ensemble.brownian[:, i, :]
        else:
            if ensemble.states is None:
                raise ValueError("state basis needs simulated states")
            x = ensemble.states[:, i, :]
        if self.clip is not None:
            x = np.clip(x, self.clip[0], self.clip[1])
        return x

    def design(self, x):
        """Global design matrix with a leading constant column; degenerate coordinates are dropped."""
        return _monomials(_standardize(x), self.degree)

    def blocks(self, x):
        """Partition of the paths into cells, each with its own locally standardized design.

        Returns a list of ``(rows, design)``; ``rows`` is None for a single
        global block.
        """
        u = _standardize(x)
        M, k = u.shape
        if self.cells <= 1 or k == 0:
            return [(None, _monomials(u, self.degree))]
        n_cols = _monomials(u[:1], self.degree).shape[1]
        per_cell = self.min_paths * n_cols * self.subsample ** -1
        cells = min(self.cells, int((M / per_cell) ** (1.0 / k)))
        if cells <= 1:
            return [(None, _monomials(u, self.degree))]
        if k == 1:
            # equal-count cells of the ordered values; argpartition avoids a full sort
            cuts = [M * j // cells for j in range(1, cells)]
            order = np.argpartition(u[:, 0], cuts)
            parts = np.split(order, cuts)
            return [(rows, self._cell_design(x[rows], j in (0, cells - 1))) for j, rows in enumerate(parts)]
        label = np.zeros(M, dtype=np.int64)
        inner = np.linspace(0.0, 1.0, cells + 1)[1:-1]
        for j in range(k):
            edges = np.quantile(u[:, j], inner)
            label = label * cells + np.searchsorted(edges, u[:, j], side="right")
        order = np.argsort(label, kind="stable")
        cuts = np.flatnonzero(np.diff(label[order])) + 1
        out = []
        for rows in np.split(order, cuts):
            digits = np.unravel_index(label[rows[0]], (cells,) * k)
            out.append((rows, self._cell_design(x[rows], any(g in (0, cells - 1) for g in digits))))
        return out

    def _cell_design(self, x, unbounded):
        # unbounded end cells extrapolate into the tails; high-degree fits there amplify noise
        if unbounded and self.tail_degree < self.degree:
            return _monomials(_standardize(x), self.tail_degree)
        return self.design(x)


@dataclass(frozen=True)
class PicardConfig:
    max_iter: int = 50
    tol: float = 1e-10
    z_clip: Optional[float] = 50.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("Picard tolerance > 0 violated")
        if self.z_clip is not None and not self.z_clip > 0:
            raise ValueError("z clipping threshold > 0 violated")
        if self.max_iter < 1:
            raise ValueError("max_iter >= 1 violated")


class _LayerRegression:
    """Least squares on one layer's cell designs, shared across targets."""

    def __init__(self, blocks, M, basis, layer):
        self.M = M
        self.keep = None
        if basis.subsample < 1.0:
            rng = np.random.default_rng([basis.seed, layer])
            K = max(phi.shape[1] for _, phi in blocks)
            m = max(K + 1, int(round(basis.subsample * M)))
            self.keep = np.zeros(M, dtype=bool)
            self.keep[rng.choice(M, size=m, replace=False)] = True
        self.parts = []
        conds = []
        for rows, phi in blocks:
            sel = None if self.keep is None else (self.keep if rows is None else self.keep[rows])
            fit = phi if sel is None else phi[sel]
            K = phi.shape[1]
            if fit.shape[0] < K:
                raise SingularRegression(layer, math.inf)
            gram = fit.T @ fit / fit.shape[0]
            pen = np.full(K, basis.ridge)
            pen[0] = 0.0
            gram[np.diag_indices(K)] += pen
            cond = float(np.linalg.cond(gram)) if K > 1 else 1.0
            if not np.isfinite(cond) or cond > basis.max_cond:
                raise SingularRegression(layer, cond)
            conds.append(cond)
            self.parts.append((rows, phi, sel, fit, gram))
        self.cond = max(conds)

    def fitted(self, target):
        """Fitted values on all paths; columns of a 2-D target are fitted jointly."""
        target = np.asarray(target, dtype=np.float64)
        one_d = target.ndim == 1
        tg = target[:, None] if one_d else target
        out = np.empty_like(tg)
        varying = []
        for j in range(tg.shape[1]):
            col = tg[:, j]
            if np.all(col == col[0]):
                out[:, j] = col[0]
            else:
                varying.append(j)
        if varying:
            tv = tg[:, varying]
            for rows, phi, sel, fit, gram in self.parts:
                part = tv if rows is None else tv[rows]
                ts = part if sel is None else part[sel]
                coef = np.linalg.solve(gram, fit.T @ ts / ts.shape[0])
                if rows is None:
                    out[:, varying] = phi @ coef
                else:
                    out[np.ix_(rows, varying)] = phi @ coef
        return out[:, 0] if one_d else out


def layer_regression(ensemble, basis, i):
    """Regression onto the basis functions of layer i of an ensemble."""
    x = basis.regressors(ensemble, i)
    return _LayerRegression(basis.blocks(x), x.shape[0], basis, i)



def log_conditional_mean_exp(reg, log_target):
    """Regression estimate of ``log E[exp(log_target) | F_i]`` on every path.

    A first fit of ``log_target`` gives an envelope ``h``; the second fit
    regresses ``exp(log_target - h)``, which varies far less than the raw
    exponential.  The result is floored at the smallest sample, a lower
    bound for any conditional mean, so it is finite even when the target
    spans hundreds of orders of magnitude.
    """
    env = reg.fitted(log_target)
    excess = log_target - env
    top = float(excess.max())
    log_ratio = excess - top
    fit = reg.fitted(np.exp(log_ratio))
    with np.errstate(divide="ignore"):
        log_fit = np.maximum(np.log(np.maximum(fit, 0.0)), float(log_ratio.min()))
    return env + top + log_fit


@dataclass(frozen=True, eq=False)
class BsdeSolution:
    """Discrete solution on grid x paths.

    ``Y[i]`` and ``Z[i]`` hold layer i; rows before ``start_layer`` are NaN.
    ``eta`` is the pathwise value ``xi + sum_i dt f_i`` whose path mean is
    Y0 when the regressions use every path.
    """

    grid: object
    Y: np.ndarray
    Z: np.ndarray
    Y0: float
    xi: np.ndarray
    eta: np.ndarray
    y0_stderr: float
    start_layer: int = 0
    diagnostics: dict = field(default_factory=dict)
    ensemble: object = None

    @property
    def M(self):
        return self.Y.shape[1]


def _clip_rows(z, bound):
    norm = np.sqrt(np.sum(z * z, axis=1))
    over = norm > bound
    if not np.any(over):
        return z, 0
    zc = z.copy()
    zc[over] *= (bound / norm[over])[:, None]
    return zc, int(over.sum())


def _depends_on_y(driver):
    if isinstance(driver, DriverSpec):
        return driver.y_coef != 0.0
    return getattr(driver, "depends_on_y", True)


def solve_backward_lsmc(driver, terminal, ensemble, basis=None, cfg=None, xi=None):
    """Solve the BSDE with driver f and terminal value xi on a path ensemble.

    The sweep runs from the terminal layer back to the layer of
    ``ensemble.t0``.  ``Y0`` is the cross-path mean at that layer, where
    every path carries the same value because the filtration is trivial.

    Raises
    ------
    PicardDivergence
        if the fixed point in y is not reached within ``cfg.max_iter``.
    SingularRegression
        if a layer's normal equations have condition number above the limit.
    """
    basis = basis or RegressionBasis()
    cfg = cfg or PicardConfig()
    grid = ensemble.grid
    N, dt = grid.N, grid.dt
    M, _, d = ensemble.increments.shape
    if getattr(driver, "d", d) != d:
        raise ValueError(f"driver dimension {driver.d} differs from ensemble dimension {d}")
    i0 = grid.index_of(ensemble.t0)
    if xi is None:
        xi = terminal.sample(ensemble)
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (M,):
        raise ValueError("terminal samples must have one value per path")

    Y = np.full((N + 1, M), np.nan)
    Z = np.full((N, M, d), np.nan)
    Y[N] = xi
    eta = xi.copy()
    t = grid.times
    y_dep = _depends_on_y(driver)
    iters, conds = [], []
    clipped = 0
    for i in range(N - 1, i0 - 1, -1):
        reg = layer_regression(ensemble, basis, i)
        conds.append(reg.cond)
        y_next = Y[i + 1]
        cond_mean = reg.fitted(y_next)
        dB = ensemble.increments[:, i, :]
        resid = y_next - cond_mean
        z = reg.fitted(resid[:, None] * dB) / dt
        Z[i] = z
        if cfg.z_clip is not None:
            z, n_clip = _clip_rows(z, cfg.z_clip)
            clipped += n_clip
        x = None if ensemble.states is None else ensemble.states[:, i, :]
        y = cond_mean
        f = driver.evaluate(t[i], y, z, x)
        k = 1
        if y_dep:
            while True:
                y_new = cond_mean + dt * f
                res = float(np.max(np.abs(y_new - y)))
                y = y_new
                f = driver.evaluate(t[i], y, z, x)
                k += 1
                if res <= cfg.tol:
                    break
                if k > cfg.max_iter or not np.isfinite(res):
                    raise PicardDivergence(i, res, k)
        f = np.broadcast_to(f, (M,))
        Y[i] = cond_mean + dt * f
        eta += dt * f
        iters.append(k)
    y0 = path_mean(Y[i0])
    diag = {
        "picard_iterations": list(reversed(iters)),
        "condition_numbers": list(reversed(conds)),
        "z_clip_events": clipped,
        "max_condition": max(conds) if conds else 1.0,
    }
    return BsdeSolution(grid, Y, Z, y0, xi, eta, mean_stderr(eta), i0, diag, ensemble)


def cole_hopf_solve(gamma, alpha, xi, ensemble, basis=None, recursive=True):
    """Oracle for ``f = alpha(t) + gamma/2 |z|^2`` through ``W = exp(gamma Y)``.

    ``Y_0 = (1/gamma) log mean exp(gamma xi) + int_0^T alpha`` is computed in
    log space.  Interior layers use the tower property
    ``W_i = E[W_{i+1} | F_i]`` (or ``E[W_T | F_i]`` when ``recursive`` is
    False), regressed with a multiplicative envelope: ``h_i =
    regress(log W_{i+1})`` first, then ``regress(exp(log W_{i+1} - h_i))``.
    The envelope keeps the second target nearly homoscedastic, which a raw
    polynomial fit of an exponential is not.  Z regresses the one-step log
    increment ``log W_{i+1} - log W_i`` against the Brownian increment, which
    stays finite when ``W`` spans many orders of magnitude.

    Raises
    ------
    ExponentialMomentError
        if ``gamma xi`` is not finite.
    """
    basis = basis or RegressionBasis()
    grid = ensemble.grid
    N, dt = grid.N, grid.dt
    M, _, d = ensemble.increments.shape
    xi = np.asarray(xi, dtype=np.float64)
    i0 = grid.index_of(ensemble.t0)
    a = gamma * xi
    if not np.all(np.isfinite(a)):
        raise ExponentialMomentError("Cole-Hopf oracle: gamma * xi is not finite")
    log_mean = log_mean_exp(a)
    tail = alpha.l1 - alpha.cumulative(grid.times)

    log_w = np.empty((N + 1, M))
    log_w[N] = a
    Y = np.full((N + 1, M), np.nan)
    Y[N] = xi
    Z = np.full((N, M, d), np.nan)
    for i in range(N - 1, i0 - 1, -1):
        reg = layer_regression(ensemble, basis, i)
        if i == i0:
            log_w[i] = log_mean
        else:
            log_w[i] = log_conditional_mean_exp(reg, log_w[i + 1] if recursive else a)
        Y[i] = log_w[i] / gamma + tail[i]
        step = log_w[i + 1] - log_w[i]
        Z[i] = reg.fitted(step[:, None] * ensemble.increments[:, i, :]) / (gamma * dt)
    Y[i0] = log_mean / gamma + tail[i0]
    y0 = float(Y[i0][0])
    se = log_mean_exp_stderr(a) / gamma
    eta = np.full(M, y0)
    return BsdeSolution(grid, Y, Z, y0, xi, eta, se, i0, {"log_mean": log_mean}, ensemble)


def build_truncated_problem(driver, terminal, n, p):
    """Truncate xi to ``[-p, n]`` and cut f off after the alpha budgets n and p.

    ``None`` or ``inf`` for an index means no truncation on that side.  The
    positive part of f is kept while ``int_0^t alpha <= n``, the negative part
    while ``int_0^t alpha <= p``; both maps are monotone in their index.
    """
    def norm(k):
        if k is None or (isinstance(k, float) and math.isinf(k)):
            return None
        if not k >= 1:
            raise ValueError("truncation indices n, p >= 1 violated")
        return float(k)

    n, p = norm(n), norm(p)
    if n is None and p is None:
        return driver, terminal
    alpha = driver.params.alpha
    T = driver.T

    def cut(k):
        if k is None:
            return None
        s = alpha.cutoff_time(k)
        return None if s >= T else s

    new_driver = replace(driver, cutoff_pos=cut(n), cutoff_neg=cut(p))
    new_terminal = replace(terminal, trunc_pos=n, trunc_neg=p)
    return new_driver, new_terminal
