"""Command line entry point: one subcommand per experiment kind, plus ``rerun``."""
from __future__ import annotations

import argparse
import os
import sys

from .config import KINDS, ConfigError, parse_config, parse_mapping
from .runner import rerun, run

EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_ERROR = 3


def build_parser():
    parser = argparse.ArgumentParser(prog="quadbsde", description="Quadratic BSDE experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", help="TOML config file with dotted keys")
        p.add_argument("--seed", type=int, help="override the RNG seed")
        p.add_argument("--out", default=None, help="output directory (default: results/<kind>)")
        p.add_argument("--paths", type=int, help="override the number of paths M")
        p.add_argument("--steps", type=int, help="override the number of time steps N")
    p = sub.add_parser("rerun", help="re-execute a run from its manifest and compare results.csv")
    p.add_argument("manifest", help="path to manifest.json")
    p.add_argument("--out", required=True, help="output directory for the new run")
    return parser


def _report(rows, stream):
    for r in rows:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.key}", file=stream)
    fails = sum(not r.passed for r in rows)
    print(f"{len(rows) - fails}/{len(rows)} certificates passed", file=stream)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "rerun":
            manifest, rows, same = rerun(args.manifest, args.out)
            _report(rows, sys.stdout)
            print(f"results.csv {'reproduced' if same else 'DIFFERS from the manifest'}")
            return 0 if same and manifest.all_passed else EXIT_FAIL
        overrides = {"kind": args.command, "seed": args.seed, "M": args.paths, "N": args.steps}
        cfg = parse_config(args.config, overrides) if args.config else parse_mapping({}, overrides)
    except (ConfigError, OSError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or os.path.join("results", cfg.kind)
    try:
        manifest, rows = run(cfg, out)
    except Exception as err:  # experiment-level failure: report and exit nonzero
        print(f"{cfg.kind} failed: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_ERROR
    _report(rows, sys.stdout)
    print(f"artifacts written to {out}")
    return 0 if manifest.all_passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
