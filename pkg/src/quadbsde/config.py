"""Experiment configuration: flat ``key = value`` files with dotted namespaces.

Files are TOML; nested tables and dotted keys are flattened, so
``[driver]\\ngamma = 2`` and ``driver.gamma = 2`` are the same setting.
Every key must appear in :data:`SCHEMA`; missing keys take the listed
defaults.
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .lab import DEFAULT_THETAS, SOLVERS
from .model import AlphaProcess, AssumptionParams, DriverSpec, Problem, TerminalSpec, TimeGrid
from .solver import PicardConfig, RegressionBasis

KINDS = ("simulate", "solve", "oracle", "verify-apriori", "verify-comparison", "verify-stability",
         "verify-monotone", "verify-moments", "pde-compare")
SEQUENCES = ("clamp", "alpha-shift", "constant")
PDE_PROBLEMS = ("quadratic-gradient", "heat-square", "heat-sine", "cole-hopf-cos")

# key -> (default, type); type "float?" admits None
SCHEMA = {
    "kind": (None, "str"),
    "seed": (0, "int"),
    "T": (1.0, "float"),
    "N": (256, "int"),
    "M": (100_000, "int"),
    "d": (1, "int"),
    "solver": ("lsmc", "str"),
    "driver.family": ("pure-quadratic", "str"),
    "driver.gamma": (1.0, "float"),
    "driver.beta": (0.0, "float"),
    "driver.alpha": (0.0, "float"),
    "driver.y_coef": (None, "float?"),
    "terminal.kind": ("brownian", "str"),
    "terminal.func": ("identity", "str"),
    "terminal.scale": (1.0, "float"),
    "terminal.shift": (0.0, "float"),
    "terminal.value": (0.0, "float"),
    "basis.degree": (3, "int"),
    "basis.cells": (8, "int"),
    "basis.tail_degree": (1, "int"),
    "basis.ridge": (1e-10, "float"),
    "picard.max_iter": (50, "int"),
    "picard.tol": (1e-10, "float"),
    "picard.z_clip": (50.0, "float?"),
    "noise.resolves": (5, "int"),
    "noise.fraction": (0.8, "float"),
    "apriori.random": (10, "int"),
    "comparison.thetas": (list(DEFAULT_THETAS), "floats"),
    "comparison.random_pairs": (0, "int"),
    "prime.gamma": (None, "float?"),
    "prime.alpha": (None, "float?"),
    "prime.shift": (0.0, "float"),
    "stability.sequence": ("clamp", "str"),
    "stability.ns": ([1.0, 2.0, 4.0, 8.0], "floats"),
    "stability.ps": ([1.0, 2.0], "floats"),
    "monotone.ns": ([1.0, 2.0, 4.0, 8.0], "floats"),
    "moments.seeds": (5, "int"),
    "moments.p": (2.0, "float"),
    "moments.builtin": (True, "bool"),
    "pde.problem": ("quadratic-gradient", "str"),
    "pde.J": (201, "int"),
    "pde.N": (1024, "int"),
    "pde.margin": (4.0, "float"),
    "pde.mesh_c": (0.5, "float"),
    "pde.level": (2.0, "float"),
}


class ConfigError(ValueError):
    pass


def _flatten(mapping, prefix=""):
    out = {}
    for k, v in mapping.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key, value, kind):
    if kind == "float?" and value is None:
        return None
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true or false, got {value!r}")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if kind in ("float", "float?"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if kind == "floats":
        if not isinstance(value, (list, tuple)) or not value:
            raise ConfigError(f"{key}: expected a non-empty list of numbers, got {value!r}")
        return [_coerce(key, v, "float") for v in value]
    raise AssertionError(kind)


def _require(ok, rule):
    if not ok:
        raise ConfigError(f"{rule} violated")


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated flat configuration; ``values`` holds every schema key."""

    values: dict
    explicit: frozenset = frozenset()

    def __getitem__(self, key):
        return self.values[key]

    @property
    def kind(self):
        return self.values["kind"]

    @property
    def seed(self):
        return self.values["seed"]

    @property
    def M(self):
        return self.values["M"]

    @property
    def N(self):
        return self.values["N"]

    def to_dict(self):
        return {k: (list(v) if isinstance(v, list) else v) for k, v in sorted(self.values.items())}

    def describe(self):
        """One ``key = value`` line per setting, defaults marked."""
        lines = []
        for k, v in sorted(self.values.items()):
            mark = "" if k in self.explicit else "  # default"
            lines.append(f"{k} = {v!r}{mark}")
        return "\n".join(lines)

    # builders ------------------------------------------------------------

    def grid(self):
        return TimeGrid(self["T"], self["N"])

    def params(self, gamma=None, alpha=None):
        g = self["driver.gamma"] if gamma is None else gamma
        a = self["driver.alpha"] if alpha is None else alpha
        return AssumptionParams(self["driver.beta"], g, AlphaProcess.constant(a, self["T"]), self["T"])

    def driver(self, gamma=None, alpha=None):
        return DriverSpec(self["driver.family"], self.params(gamma, alpha), self["d"], y_coef=self["driver.y_coef"])

    def terminal(self, extra_shift=0.0):
        kind = self["terminal.kind"]
        if kind == "constant":
            return TerminalSpec.constant(self["terminal.value"] + extra_shift)
        if kind == "brownian":
            return TerminalSpec.brownian(self["terminal.func"], self["terminal.scale"],
                                         self["terminal.shift"] + extra_shift)
        raise ConfigError(f"terminal.kind must be constant or brownian, got {kind!r}")

    def problem(self):
        return Problem(self.driver(), self.terminal(), "configured")

    def problem_prime(self):
        return Problem(self.driver(self["prime.gamma"], self["prime.alpha"]), self.terminal(self["prime.shift"]),
                       "configured-prime")

    def basis(self):
        return RegressionBasis(degree=self["basis.degree"], cells=self["basis.cells"],
                               tail_degree=self["basis.tail_degree"], ridge=self["basis.ridge"])

    def picard(self):
        return PicardConfig(self["picard.max_iter"], self["picard.tol"], self["picard.z_clip"])


def _validate(cfg):
    v = cfg.values
    _require(v["kind"] in KINDS, f"kind in {KINDS}")
    _require(0 <= v["seed"] < 2**64, "0 <= seed < 2^64")
    _require(v["T"] > 0, "T > 0")
    _require(v["N"] >= 1, "N >= 1")
    _require(v["M"] >= 2, "M >= 2")
    _require(v["d"] >= 1, "d >= 1")
    _require(v["solver"] in SOLVERS, f"solver in {SOLVERS}")
    _require(v["driver.gamma"] > 0, "gamma > 0")
    _require(v["noise.resolves"] >= 2, "noise.resolves >= 2")
    _require(0 < v["noise.fraction"] < 1, "0 < noise.fraction < 1")
    _require(v["apriori.random"] >= 0, "apriori.random >= 0")
    _require(v["comparison.random_pairs"] >= 0, "comparison.random_pairs >= 0")
    _require(all(0 < th < 1 for th in v["comparison.thetas"]), "theta in (0, 1)")
    _require(v["prime.shift"] >= 0, "prime.shift >= 0")
    _require(v["prime.gamma"] is None or v["prime.gamma"] >= v["driver.gamma"], "prime.gamma >= driver.gamma")
    _require(v["prime.alpha"] is None or v["prime.alpha"] >= v["driver.alpha"], "prime.alpha >= driver.alpha")
    _require(v["stability.sequence"] in SEQUENCES, f"stability.sequence in {SEQUENCES}")
    _require(all(n >= 1 and math.isfinite(n) for n in v["stability.ns"]), "stability.ns entries >= 1")
    _require(all(p >= 1 for p in v["stability.ps"]), "stability.ps entries >= 1")
    _require(all(n >= 1 and math.isfinite(n) for n in v["monotone.ns"]), "monotone.ns entries >= 1")
    _require(v["moments.seeds"] >= 2, "moments.seeds >= 2")
    _require(v["moments.p"] > 1, "moments.p > 1")
    _require(v["pde.problem"] in PDE_PROBLEMS, f"pde.problem in {PDE_PROBLEMS}")
    _require(v["pde.J"] >= 3, "pde.J >= 3")
    _require(v["pde.N"] >= 1, "pde.N >= 1")
    _require(v["pde.margin"] > 0, "pde.margin > 0")
    try:
        cfg.problem()
        cfg.problem_prime()
        cfg.basis()
        cfg.picard()
    except ValueError as err:
        raise ConfigError(str(err)) from None


def parse_mapping(mapping, overrides=None):
    """Validate a (possibly nested) mapping; ``overrides`` are flat keys applied on top.

    Raises
    ------
    ConfigError
        listing unknown keys, or naming the first violated rule.
    """
    flat = _flatten(dict(mapping))
    flat.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = sorted(set(flat) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = {}
    for key, (default, kind) in SCHEMA.items():
        values[key] = _coerce(key, flat[key], kind) if key in flat else (
            list(default) if isinstance(default, list) else default)
    if values["kind"] is None:
        raise ConfigError("kind is required")
    cfg = ExperimentConfig(values, frozenset(flat))
    _validate(cfg)
    return cfg


def parse_config(path, overrides=None):
    """Read and validate a config file."""
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"{path}: {err}") from None
    return parse_mapping(data, overrides)
