"""Experiment dispatch and result persistence.

A run writes ``results.csv`` (one row per certificate), ``summary.txt``
and ``manifest.json`` into its output directory, plus experiment-specific
plot data.  Every number in the CSV is a function of the configuration
alone, so re-running a manifest reproduces the CSV byte for byte.
"""
from __future__ import annotations

import csv
import datetime
import hashlib
import io
import json
import math
import os
import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr

from . import __version__, kernels
from .config import parse_mapping
from .lab import (
    alpha_shift_sequence,
    builtin_problems,
    check_apriori,
    clamp_sequence,
    constant_sequence,
    moment_stability_certificate,
    random_certified_problems,
    random_ordered_pairs,
    run_comparison_experiment,
    run_monotone_approximation,
    run_stability_experiment,
    solve,
)
from .pde import FkConfig, PdeGrid, PdeProblem, check_growth, compare_pde_mc, fd_solve, standard_points
from .sde import simulate_brownian
from .solver import RegressionBasis

COLUMNS = ("experiment", "certificate", "statistic", "bound", "stderr", "theta_or_n", "pass", "seed")


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    certificate: str
    statistic: float
    bound: float
    stderr: float
    theta_or_n: float
    passed: bool
    seed: int

    @property
    def key(self):
        return f"{self.experiment}/{self.certificate}/{_fmt(self.theta_or_n)}"


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([r.experiment, r.certificate, _fmt(r.statistic), _fmt(r.bound), _fmt(r.stderr),
                    _fmt(r.theta_or_n), _fmt(r.passed), str(r.seed)])
    return buf.getvalue()


def table_to_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


# --------------------------------------------------------------------------
# experiments: each returns (rows, {filename: text})
# --------------------------------------------------------------------------


def closed_form_y0(driver, terminal):
    """Y0 for a pure-quadratic driver with constant alpha and a constant, B_T or |B_T| terminal; else None."""
    if driver.family != "pure-quadratic" or driver.truncated or terminal.truncated or driver.d != 1:
        return None
    g, T = driver.gamma, driver.T
    drift = float(driver.params.alpha.integral(0.0, T))
    if terminal.kind == "constant":
        return terminal.value + drift
    if terminal.kind != "brownian" or not isinstance(terminal.func, str):
        return None
    s, c = terminal.scale, terminal.shift
    if terminal.func == "identity":
        return c + drift + 0.5 * g * s * s * T
    if terminal.func == "abs":
        k = g * abs(s)
        if s < 0:
            return None
        # E exp(k |B_T|) = 2 exp(k^2 T / 2) Phi(k sqrt(T))
        return c + drift + (math.log(2.0) + 0.5 * k * k * T + math.log(ndtr(k * math.sqrt(T)))) / g
    return None


def _ensemble(cfg):
    return simulate_brownian(cfg.grid(), cfg.M, cfg["d"], seed=cfg.seed)


def _exp_simulate(cfg):
    ens = _ensemble(cfg)
    inc = ens.increments
    n = inc.size
    dt = ens.grid.dt
    var = float(inc.var() / dt)
    mean = float(inc.mean() / math.sqrt(dt))
    se_var, se_mean = math.sqrt(2.0 / n), 1.0 / math.sqrt(n)
    rows = [
        ResultRow("simulate", "increment_variance", var, 1.0, se_var, None, abs(var - 1.0) <= 5 * se_var, cfg.seed),
        ResultRow("simulate", "increment_mean", mean, 0.0, se_mean, None, abs(mean) <= 5 * se_mean, cfg.seed),
    ]
    b = ens.brownian[:, :, 0]
    q05, q50, q95 = np.quantile(b, [0.05, 0.5, 0.95], axis=0)
    table = zip(ens.grid.times, b.mean(axis=0), b.std(axis=0), q05, q50, q95)
    return rows, {"paths.csv": table_to_csv(("t", "mean", "std", "q05", "q50", "q95"), table)}


def _layer_table(sol):
    i0 = sol.start_layer
    times = sol.grid.times
    rows = []
    for i in range(i0, sol.grid.N + 1):
        z = float(np.mean(sol.Z[i, :, 0])) if i < sol.grid.N else None
        rows.append((times[i], float(np.mean(sol.Y[i])), float(np.std(sol.Y[i])), z))
    return table_to_csv(("t", "mean_y", "std_y", "mean_z"), rows)


# time-discretization and regression allowance for LSMC against a closed form
LSMC_ALLOWANCE = 0.02


def _exp_solve(cfg, kind="solve", solver=None):
    p = cfg.problem()
    solver = solver or cfg["solver"]
    sol = solve(p.driver, p.terminal, _ensemble(cfg), cfg.basis(), cfg.picard(), solver)
    ref = closed_form_y0(p.driver, p.terminal)
    se = sol.y0_stderr
    if ref is None:
        row = ResultRow(kind, "y0", sol.Y0, None, se, None, math.isfinite(sol.Y0), cfg.seed)
    else:
        allowance = 0.0 if solver == "oracle" else LSMC_ALLOWANCE
        row = ResultRow(kind, "y0", sol.Y0, ref, se, None, abs(sol.Y0 - ref) <= 3 * se + allowance + 1e-12, cfg.seed)
    rows = [row]
    diag = sol.diagnostics
    if "max_condition" in diag:
        cfg_max = RegressionBasis().max_cond
        rows.append(ResultRow(kind, "regression_condition", float(diag["max_condition"]), cfg_max, 0.0, None,
                              diag["max_condition"] <= cfg_max, cfg.seed))
    if "picard_iterations" in diag and diag["picard_iterations"]:
        it = max(diag["picard_iterations"])
        rows.append(ResultRow(kind, "picard_iterations", float(it), float(cfg["picard.max_iter"]), 0.0, None,
                              it <= cfg["picard.max_iter"], cfg.seed))
    return rows, {"layers.csv": _layer_table(sol)}


def _exp_oracle(cfg):
    return _exp_solve(cfg, "oracle", solver="oracle")


def _exp_apriori(cfg):
    problems = [cfg.problem()] + random_certified_problems(cfg["apriori.random"], seed=cfg.seed, T=cfg["T"])
    ens = _ensemble(cfg)
    rows = []
    for k, p in enumerate(problems):
        sol = solve(p.driver, p.terminal, ens, cfg.basis(), cfg.picard(), "lsmc")
        c = check_apriori(sol, p.driver.params, sol.xi, seed=cfg.seed)
        rows.append(ResultRow("verify-apriori", f"apriori:{p.label}", c.statistic, c.bound, c.stderr, k, c.passed,
                              cfg.seed))
    return rows, {}


def _comparison_rows(label, k, rep, seed):
    rows = [
        ResultRow("verify-comparison", f"violation_fraction:{label}", rep.violation_fraction, 0.0, 0.0, k,
                  rep.violation_fraction == 0.0, seed),
        ResultRow("verify-comparison", f"max_diff:{label}", rep.max_diff, rep.tol, rep.noise_floor, k,
                  rep.max_diff <= rep.tol, seed),
    ]
    for c in rep.certificates:
        rows.append(ResultRow("verify-comparison", f"theta_gap:{label}", c.statistic, c.bound, c.stderr, c.parameter,
                              c.passed, seed))
    for th in sorted(rep.overflow):
        rows.append(ResultRow("verify-comparison", f"theta_gap:{label}", math.inf, None, None, th, False, seed))
    return rows


def _exp_comparison(cfg):
    ens = _ensemble(cfg)
    common = dict(basis=cfg.basis(), cfg=cfg.picard(), thetas=tuple(cfg["comparison.thetas"]),
                  n_resolves=cfg["noise.resolves"], seed=cfg.seed)
    rep = run_comparison_experiment(cfg.problem(), cfg.problem_prime(), ens, **common)
    rows = _comparison_rows("configured", 0, rep, cfg.seed)
    pairs = random_ordered_pairs(cfg["comparison.random_pairs"], seed=cfg.seed, T=cfg["T"])
    for k, (p, q) in enumerate(pairs, start=1):
        rows += _comparison_rows(p.label, k, run_comparison_experiment(p, q, ens, **common), cfg.seed)
    return rows, {}


_BUILDERS = {"clamp": clamp_sequence, "alpha-shift": alpha_shift_sequence, "constant": constant_sequence}


def _exp_stability(cfg):
    p = cfg.problem()
    ns = tuple(cfg["stability.ns"])
    builder = _BUILDERS[cfg["stability.sequence"]](p.driver, p.terminal)
    rep = run_stability_experiment(p, builder, ns, _ensemble(cfg), ps=tuple(cfg["stability.ps"]), basis=cfg.basis(),
                                   cfg=cfg.picard(), solver=cfg["solver"], n_resolves=cfg["noise.resolves"],
                                   fraction=cfg["noise.fraction"], seed=cfg.seed)
    rows, table = [], []
    for pw in rep.ps:
        for name, vals, floor in (("e", rep.e[pw], rep.e_floor[pw]), ("z", rep.z[pw], rep.z_floor[pw])):
            for k, n in enumerate(rep.ns):
                if k == 0:
                    ok, bound = True, None
                else:
                    bound = vals[k - 1]
                    ok = vals[k] < bound or max(vals[k], bound) <= 2.0 * floor
                rows.append(ResultRow("verify-stability", f"{name}_p{pw:g}", vals[k], bound, None, n, ok, cfg.seed))
                table.append((name, pw, n, vals[k], floor))
            rows.append(ResultRow("verify-stability", f"{name}_p{pw:g}_floor", vals[-1], 2.0 * floor, floor, ns[-1],
                                  vals[-1] <= 2.0 * floor, cfg.seed))
    return rows, {"stability.csv": table_to_csv(("statistic", "p", "n", "value", "floor"), table)}


def _exp_monotone(cfg):
    rep = run_monotone_approximation(cfg.problem(), tuple(cfg["monotone.ns"]), _ensemble(cfg), cfg.basis(),
                                     cfg.picard(), cfg["solver"], n_resolves=cfg["noise.resolves"], seed=cfg.seed)
    rows = []
    for k, n in enumerate(rep.ns):
        prev = rep.y0[k - 1] if k else None
        ok = True if k == 0 else rep.y0[k] >= prev - rep.tol
        rows.append(ResultRow("verify-monotone", "y0_truncated", rep.y0[k], prev, rep.tol, n, ok, cfg.seed))
    last_gap = rep.gaps[-1] if rep.gaps else 0.0
    rows.append(ResultRow("verify-monotone", "gaps_shrinking", last_gap, None, rep.tol, None, rep.gaps_shrinking,
                          cfg.seed))
    rows.append(ResultRow("verify-monotone", "converged", last_gap, rep.tol, rep.tol, rep.ns[-2] if rep.gaps else None,
                          rep.converged, cfg.seed))
    return rows, {}


def _exp_moments(cfg):
    problems = list(builtin_problems(cfg["T"]).values()) if cfg["moments.builtin"] else [cfg.problem()]
    seeds = tuple(range(cfg.seed, cfg.seed + cfg["moments.seeds"]))
    rows = []
    for p in problems:
        c = moment_stability_certificate(p, cfg.grid(), cfg.M, seeds, cfg["moments.p"], cfg.basis(), cfg.picard(),
                                         cfg["solver"])
        rows.append(ResultRow("verify-moments", f"moment_ratio_spread:{p.label}", c.statistic, c.bound, c.stderr,
                              c.parameter, c.passed, cfg.seed))
    return rows, {}


def pde_problem(cfg):
    name, T = cfg["pde.problem"], cfg["T"]
    if name == "quadratic-gradient":
        return PdeProblem.quadratic_gradient(cfg["driver.gamma"], T)
    if name == "heat-square":
        return PdeProblem.heat_square(T)
    if name == "heat-sine":
        return PdeProblem.heat_sine(T)
    return PdeProblem.cole_hopf_cos(cfg["driver.gamma"], cfg["pde.level"], T)


def _exp_pde(cfg):
    prob = pde_problem(cfg)
    pts = standard_points(prob.T)
    grid = PdeGrid.around(pts, prob.sigma_bound, prob.T, cfg["pde.J"], cfg["pde.N"], cfg["pde.margin"])
    fk = FkConfig(N=cfg.N, M=cfg.M, seed=cfg.seed, basis=RegressionBasis(kind="state", degree=cfg["basis.degree"],
                                                                         cells=cfg["basis.cells"],
                                                                         tail_degree=cfg["basis.tail_degree"]),
                  picard=cfg.picard(), require_certificate=prob.p < 2)
    rep = compare_pde_mc(prob, grid, pts, fk, mesh_c=cfg["pde.mesh_c"])
    rows = [ResultRow("pde-compare", "fd_vs_mc", pc.discrepancy, pc.budget, pc.mc_stderr, k, pc.passed, cfg.seed)
            for k, pc in enumerate(rep.points)]
    sol = fd_solve(prob, grid, mesh_c=cfg["pde.mesh_c"])
    if prob.exact is not None:
        margin = cfg["pde.margin"] * prob.sigma_bound * math.sqrt(prob.T)
        err = sol.sup_error(prob.exact, margin)
        rows.append(ResultRow("pde-compare", "fd_sup_error", err, 1e-3, 0.0, None, err < 1e-3, cfg.seed))
    gr = check_growth(sol, prob.p)
    rows.append(ResultRow("pde-compare", "growth_constant", gr.C, 2.0 * gr.C_inner, 0.0, prob.p, gr.passed, cfg.seed))
    header = ("t", "x", "u_fd", "u_mc", "ci_lo", "ci_hi", "budget", "pass")
    return rows, {"pde_points.csv": table_to_csv(header, rep.rows())}


EXPERIMENTS = {
    "simulate": _exp_simulate,
    "solve": _exp_solve,
    "oracle": _exp_oracle,
    "verify-apriori": _exp_apriori,
    "verify-comparison": _exp_comparison,
    "verify-stability": _exp_stability,
    "verify-monotone": _exp_monotone,
    "verify-moments": _exp_moments,
    "pde-compare": _exp_pde,
}


# --------------------------------------------------------------------------
# run and rerun
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RunManifest:
    config: dict
    version: str
    timestamp: str
    wall_clock: float
    seed: int
    passes: dict
    digests: dict
    backend: str
    explicit: tuple = ()

    @property
    def all_passed(self):
        return all(self.passes.values())

    def to_json(self):
        return json.dumps({"config": self.config, "version": self.version, "timestamp": self.timestamp,
                           "wall_clock": self.wall_clock, "seed": self.seed, "passes": self.passes,
                           "all_passed": self.all_passed, "digests": self.digests, "backend": self.backend,
                           "explicit": list(self.explicit)},
                          indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        return cls(d["config"], d["version"], d["timestamp"], d["wall_clock"], d["seed"], d["passes"], d["digests"],
                   d.get("backend", ""), tuple(d.get("explicit", ())))


def _summary(cfg, rows, elapsed_note=""):
    lines = [f"experiment: {cfg.kind}", f"seed: {cfg.seed}", "", "configuration:", cfg.describe(), "", "certificates:"]
    for r in rows:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"  {status}  {r.certificate}  [{_fmt(r.theta_or_n)}]  statistic={_fmt(r.statistic)}  "
                     f"bound={_fmt(r.bound)}")
    fails = [r.key for r in rows if not r.passed]
    lines += ["", f"{len(rows) - len(fails)}/{len(rows)} certificates passed"]
    if fails:
        lines.append("failed: " + ", ".join(fails))
    return "\n".join(lines) + "\n" + elapsed_note


def _write(out, name, text):
    path = os.path.join(out, name)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def run(cfg, out):
    """Run the configured experiment and write its artifacts into ``out``."""
    os.makedirs(out, exist_ok=True)
    start = time.perf_counter()
    rows, extra = EXPERIMENTS[cfg.kind](cfg)
    elapsed = time.perf_counter() - start
    digests = {"results.csv": _write(out, "results.csv", rows_to_csv(rows))}
    for name in sorted(extra):
        digests[name] = _write(out, name, extra[name])
    digests["summary.txt"] = _write(out, "summary.txt", _summary(cfg, rows))
    passes = {}
    for r in rows:
        passes[r.key] = bool(passes.get(r.key, True) and r.passed)
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    manifest = RunManifest(cfg.to_dict(), __version__, stamp, round(elapsed, 3), cfg.seed, passes, digests,
                           kernels.BACKEND, tuple(sorted(cfg.explicit)))
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
        fh.write(manifest.to_json())
    return manifest, rows


def rerun(manifest_path, out):
    """Re-execute a manifest; returns (new manifest, rows, whether results.csv matched bit for bit)."""
    old = RunManifest.load(manifest_path)
    # the full config fixes every value; the explicit keys restore the default marks in summary.txt
    cfg = replace(parse_mapping(old.config), explicit=frozenset(old.explicit))
    new, rows = run(cfg, out)
    return new, rows, new.digests["results.csv"] == old.digests["results.csv"]
